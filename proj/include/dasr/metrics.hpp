#pragma once

#include <limits>

#include "dasr/tensor.hpp"

namespace dasr {

struct SsimParams {
    int window_size = 11;
    double window_sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double peak = 1.0;
};

inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

/// Mean squared error over every element of both tensors.
double mse(const Tensor<float>& a, const Tensor<float>& b);

/// 10·log10(peak² / MSE) over all channels jointly; kInfinitePsnr when
/// the inputs are identical.
double psnr(const Tensor<float>& a, const Tensor<float>& b, double peak = 1.0);
double psnr_from_mse(double mse, double peak = 1.0);

/// Gaussian-windowed SSIM per channel over fully valid windows only,
/// averaged over positions, channels and batch items.
double ssim(const Tensor<float>& a, const Tensor<float>& b, const SsimParams& params = {});

}  // namespace dasr

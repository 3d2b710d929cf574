#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "dasr/tensor.hpp"

namespace dasr {

struct BicubicDown {
    int scale = 2;
    bool operator==(const BicubicDown&) const = default;
};
struct BicubicUp {
    int scale = 2;
    bool operator==(const BicubicUp&) const = default;
};
struct Blur {
    int size = 9;
    double sigma = 2.0;
    bool operator==(const Blur&) const = default;
};
struct Noise {
    double target_psnr_db = 40.0;
    std::uint64_t seed = 0;
    bool operator==(const Noise&) const = default;
};

using DegradationStep = std::variant<BicubicDown, BicubicUp, Blur, Noise>;

// Spatial factor output/input as a reduced fraction.
struct ScaleRatio {
    int num = 1;
    int den = 1;
    bool operator==(const ScaleRatio&) const = default;
    double value() const { return static_cast<double>(num) / den; }
};

/// Ordered list of degradation steps. Bicubic scales are restricted to 2
/// and 4; blur sizes must be odd with positive sigma.
class DegradationSpec {
public:
    DegradationSpec() = default;
    explicit DegradationSpec(std::vector<DegradationStep> steps);

    const std::vector<DegradationStep>& steps() const noexcept { return steps_; }
    bool empty() const noexcept { return steps_.empty(); }
    ScaleRatio net_scale() const;
    // Short domain label, e.g. "blur9+noise40" or "bicubic_down4".
    std::string label() const;

    bool operator==(const DegradationSpec&) const = default;

private:
    std::vector<DegradationStep> steps_;
};

void validate_step(const DegradationStep& step);
std::string step_label(const DegradationStep& step);

/// (size - 1) / 4: 7 -> 1.5, 9 -> 2.0, 11 -> 2.5.
double default_blur_sigma(int size);

/// Keys cubic convolution kernel.
double bicubic_weight(double x, double a = -0.5);

/// Separable bicubic resampling (rows, then columns) with the half-pixel
/// convention src = (dst + 0.5) / scale - 0.5 and clamped borders. When
/// shrinking with `antialias`, the kernel is stretched by 1/scale and the
/// taps renormalized. Output is clipped to [0, 1].
Tensor<float> resample_bicubic(const Tensor<float>& image, double scale, bool antialias = true);

struct BlurKernel {
    int size = 0;
    std::vector<double> weights;  // size x size, row-major, sums to 1
    double at(int y, int x) const { return weights[static_cast<std::size_t>(y) * size + x]; }
};

BlurKernel blur_kernel(int size, double sigma);

/// Per-channel 2-D correlation with clamp-replicate borders.
Tensor<float> blur(const Tensor<float>& image, const BlurKernel& kernel);

/// Standard deviation that yields `target_psnr_db` against a peak of 1.
double noise_sigma(double target_psnr_db);

/// Adds i.i.d. Gaussian noise of noise_sigma(target_psnr_db), clips to [0, 1].
Tensor<float> add_noise(const Tensor<float>& image, double target_psnr_db, std::uint64_t seed);

/// Applies the steps in order. `stream` decorrelates the noise of
/// different images degraded with the same spec (stream 0 uses the spec's
/// seeds verbatim).
Tensor<float> apply(const DegradationSpec& spec, const Tensor<float>& image, std::uint64_t stream = 0);

}  // namespace dasr

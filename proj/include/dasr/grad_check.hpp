#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>

#include "dasr/tensor.hpp"

namespace dasr {

struct GradCheckOptions {
    double eps = 1e-4;
    // 0 probes every element of every leaf; otherwise a seeded sample.
    std::size_t max_probes = 0;
    std::uint64_t seed = 0;
    // Drop probes whose +eps / -eps evaluations fall on different sides of
    // a relu or |x| kink; central differences are meaningless there.
    bool skip_kinks = true;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t probes = 0;
    std::size_t straddled = 0;
};

/// Compares the tape gradient of the scalar `loss_fn()` against central
/// differences, element by element over `leaves` (which must require
/// grad). Relative error is |a - cd| / max(|a|, |cd|, 1e-8).
GradCheckResult grad_check(const std::function<Tensor<double>()>& loss_fn, std::span<Tensor<double>> leaves,
                           const GradCheckOptions& options = {});

// Single-input form: `op` maps the input to a scalar.
GradCheckResult grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& op,
                           const Tensor<double>& input, double eps);

}  // namespace dasr

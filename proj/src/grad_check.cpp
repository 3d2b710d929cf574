#include "dasr/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <utility>
#include <vector>

#include "dasr/ops.hpp"
#include "dasr/tape.hpp"

namespace dasr {

GradCheckResult grad_check(const std::function<Tensor<double>()>& loss_fn, std::span<Tensor<double>> leaves,
                           const GradCheckOptions& options) {
    for (const auto& leaf : leaves) {
        if (!leaf.requires_grad()) throw Error("grad_check: every leaf must require grad");
    }
    {
        Tape<double> tape;
        auto scope = tape.activate();
        Tensor<double> loss = loss_fn();
        tape.backward(loss);
    }

    std::vector<std::pair<std::size_t, std::size_t>> probes;
    for (std::size_t l = 0; l < leaves.size(); ++l) {
        for (std::size_t i = 0; i < leaves[l].numel(); ++i) probes.emplace_back(l, i);
    }
    if (options.max_probes > 0 && probes.size() > options.max_probes) {
        std::mt19937_64 rng(options.seed);
        std::shuffle(probes.begin(), probes.end(), rng);
        probes.resize(options.max_probes);
        std::sort(probes.begin(), probes.end());
    }

    auto evaluate = [&](std::uint64_t& fingerprint) {
        KinkMonitor monitor;
        const double v = loss_fn().item();
        fingerprint = monitor.fingerprint();
        return v;
    };

    GradCheckResult result;
    for (auto [l, i] : probes) {
        auto values = leaves[l].mutable_values();
        const double analytic = leaves[l].grad()[i];
        const double original = values[i];
        std::uint64_t fp_plus = 0, fp_minus = 0;
        values[i] = original + options.eps;
        const double f_plus = evaluate(fp_plus);
        values[i] = original - options.eps;
        const double f_minus = evaluate(fp_minus);
        values[i] = original;
        if (options.skip_kinks && fp_plus != fp_minus) {
            ++result.straddled;
            continue;
        }
        const double cd = (f_plus - f_minus) / (2.0 * options.eps);
        const double denom = std::max({std::abs(analytic), std::abs(cd), 1e-8});
        result.max_rel_error = std::max(result.max_rel_error, std::abs(analytic - cd) / denom);
        ++result.probes;
    }
    return result;
}

GradCheckResult grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& op,
                           const Tensor<double>& input, double eps) {
    Tensor<double> leaf = input.clone();
    leaf.set_requires_grad(true);
    Tensor<double> leaves[] = {leaf};
    GradCheckOptions options;
    options.eps = eps;
    return grad_check([&] { return op(leaf); }, leaves, options);
}

}  // namespace dasr

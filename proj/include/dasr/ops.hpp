#pragma once

#include <cstdint>

#include "dasr/tape.hpp"
#include "dasr/tensor.hpp"

namespace dasr {

// All operations record onto the active tape when any input is traced or
// requires grad. Reductions inside an output element always run in the
// same order (bias, then input channel, kernel row, kernel column), so
// results are bitwise reproducible.

/// 2-D cross-correlation with zero padding. `weight` is (Cout, Cin, kh, kw)
/// with odd kh/kw; `bias` is empty or (1, Cout, 1, 1).
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, int stride,
                 int padding);

/// (N, C·r², H, W) -> (N, C, H·r, W·r).
template <class T>
Tensor<T> pixel_shuffle(const Tensor<T>& input, int r);

/// Inverse of pixel_shuffle: (N, C, H·r, W·r) -> (N, C·r², H, W).
template <class T>
Tensor<T> pixel_unshuffle(const Tensor<T>& input, int r);

template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& input);

template <class T>
Tensor<T> relu(const Tensor<T>& input);

template <class T>
Tensor<T> sigmoid(const Tensor<T>& input);

// `b` may match `a` exactly or be a (N, C, 1, 1) per-channel operand.
template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <class T>
Tensor<T> scale(const Tensor<T>& input, T s);

// Sum of all elements, as a (1,1,1,1) tensor.
template <class T>
Tensor<T> sum(const Tensor<T>& input);

// Mean absolute difference, as a (1,1,1,1) tensor.
template <class T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target);

/// Fingerprints which side of each non-differentiable point (relu at 0,
/// |x| at 0) the forward pass landed on. Active for the lifetime of the
/// object on the current thread; used by the finite-difference checker to
/// recognise probes that straddle a kink.
class KinkMonitor {
public:
    KinkMonitor();
    ~KinkMonitor();
    KinkMonitor(const KinkMonitor&) = delete;
    KinkMonitor& operator=(const KinkMonitor&) = delete;

    std::uint64_t fingerprint() const noexcept { return hash_; }
    void reset() noexcept { hash_ = kSeed; }

    static KinkMonitor* current() noexcept;
    void observe(bool positive) noexcept;

private:
    static constexpr std::uint64_t kSeed = 1469598103934665603ULL;
    std::uint64_t hash_ = kSeed;
    KinkMonitor* previous_;
};

}  // namespace dasr

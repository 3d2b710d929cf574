#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "dasr/degradation.hpp"
#include "dasr/metrics.hpp"
#include "dasr/rng.hpp"

using namespace dasr;

namespace {

Tensor<float> random_image(int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    Tensor<float> t({1, 3, h, w});
    for (auto& v : t.mutable_values()) v = static_cast<float>(rng.uniform());
    return t;
}

// Direct sliding-window SSIM with a full 2-D Gaussian window.
double ssim_direct(const Tensor<float>& a, const Tensor<float>& b) {
    const int ws = 11;
    const double sigma = 1.5, c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    std::vector<double> win(ws * ws);
    double total = 0.0;
    for (int y = 0; y < ws; ++y)
        for (int x = 0; x < ws; ++x) {
            win[y * ws + x] = std::exp(-((y - 5) * (y - 5) + (x - 5) * (x - 5)) / (2 * sigma * sigma));
            total += win[y * ws + x];
        }
    for (auto& v : win) v /= total;
    const Shape s = a.shape();
    double acc = 0.0;
    int count = 0;
    for (int c = 0; c < s.c; ++c) {
        double plane_acc = 0.0;
        int plane_count = 0;
        for (int y = 0; y + ws <= s.h; ++y)
            for (int x = 0; x + ws <= s.w; ++x) {
                double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
                for (int dy = 0; dy < ws; ++dy)
                    for (int dx = 0; dx < ws; ++dx) {
                        const double wgt = win[dy * ws + dx];
                        const double va = a(0, c, y + dy, x + dx), vb = b(0, c, y + dy, x + dx);
                        ma += wgt * va;
                        mb += wgt * vb;
                        saa += wgt * va * va;
                        sbb += wgt * vb * vb;
                        sab += wgt * va * vb;
                    }
                const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
                plane_acc += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++plane_count;
            }
        acc += plane_acc / plane_count;
        ++count;
    }
    return acc / count;
}

}  // namespace

TEST(Psnr, IdenticalIsInfinite) {
    auto a = random_image(16, 16, 1);
    EXPECT_EQ(psnr(a, a), kInfinitePsnr);
    EXPECT_TRUE(std::isinf(psnr(a, a.clone())));
}

TEST(Psnr, ConstantOffsetClosedForm) {
    Tensor<float> a({1, 3, 32, 32}, 0.25f);
    Tensor<float> b({1, 3, 32, 32}, 0.25f + 16.0f / 255.0f);
    const double expected = 10.0 * std::log10(255.0 * 255.0 / (16.0 * 16.0));
    EXPECT_NEAR(expected, 24.048, 1e-3);
    EXPECT_NEAR(psnr(a, b), expected, 1e-4);
    EXPECT_EQ(psnr(a, b), psnr(b, a));
}

TEST(Psnr, DecreasesWithNoise) {
    Tensor<float> gray({1, 3, 64, 64}, 0.5f);
    const double p1 = psnr(add_noise(gray, 45, 1), gray);
    const double p2 = psnr(add_noise(gray, 35, 1), gray);
    const double p3 = psnr(add_noise(gray, 25, 1), gray);
    EXPECT_GT(p1, p2);
    EXPECT_GT(p2, p3);
}

TEST(Psnr, RejectsShapeMismatch) {
    EXPECT_THROW(psnr(Tensor<float>({1, 3, 4, 4}), Tensor<float>({1, 3, 4, 5})), ShapeError);
}

TEST(Ssim, SelfSimilarityIsOne) {
    auto a = random_image(32, 40, 2);
    EXPECT_NEAR(ssim(a, a), 1.0, 1e-9);
}

TEST(Ssim, MatchesDirectSummation) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto a = random_image(32, 32, 100 + seed);
        auto b = blur(random_image(32, 32, 200 + seed), blur_kernel(3, 0.8));
        EXPECT_NEAR(ssim(a, b), ssim_direct(a, b), 1e-6);
    }
}

TEST(Ssim, SymmetricAndBounded) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto a = random_image(24, 24, seed);
        auto b = random_image(24, 24, seed + 50);
        EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-9);
        EXPECT_LE(std::abs(ssim(a, b)), 1.0);
    }
}

TEST(Ssim, InvertedPatternScoresLow) {
    Tensor<float> a({1, 3, 32, 32});
    auto v = a.mutable_values();
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) v[a.index(0, c, y, x)] = ((x / 4 + y / 4) % 2) ? 0.9f : 0.1f;
    Tensor<float> inv = a.clone();
    for (auto& x : inv.mutable_values()) x = 1.0f - x;
    EXPECT_LT(ssim(a, inv), 0.0);
    EXPECT_LT(psnr(a, inv), 5.0);
}

TEST(Ssim, RejectsSmallImages) {
    EXPECT_THROW(ssim(Tensor<float>({1, 3, 10, 32}), Tensor<float>({1, 3, 10, 32})), ShapeError);
}

TEST(Metrics, FlipInvariantExactly) {
    for (int w : {31, 32}) {
        auto a = random_image(28, w, 7);
        auto b = random_image(28, w, 8);
        EXPECT_EQ(psnr(a, b), psnr(flip_horizontal(a), flip_horizontal(b)));
        EXPECT_EQ(ssim(a, b), ssim(flip_horizontal(a), flip_horizontal(b)));
    }
}

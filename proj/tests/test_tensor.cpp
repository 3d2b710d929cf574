#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "dasr/grad_check.hpp"
#include "dasr/ops.hpp"
#include "dasr/tape.hpp"

using namespace dasr;

namespace {

template <class T>
Tensor<T> random_tensor(Shape s, std::uint64_t seed, T lo = T(-1), T hi = T(1)) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<T> v(s.numel());
    for (auto& x : v) x = static_cast<T>(dist(rng));
    return Tensor<T>(s, std::move(v));
}

// Direct 7-loop reference, independent of the row kernels.
Tensor<double> conv_reference(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b, int pad) {
    const Shape si = x.shape(), sw = w.shape();
    const int ho = si.h + 2 * pad - sw.h + 1, wo = si.w + 2 * pad - sw.w + 1;
    Tensor<double> out({si.n, sw.n, ho, wo});
    auto o = out.mutable_values();
    for (int n = 0; n < si.n; ++n)
        for (int co = 0; co < sw.n; ++co)
            for (int y = 0; y < ho; ++y)
                for (int xx = 0; xx < wo; ++xx) {
                    double acc = b.empty() ? 0.0 : b.values()[co];
                    for (int ci = 0; ci < si.c; ++ci)
                        for (int ky = 0; ky < sw.h; ++ky)
                            for (int kx = 0; kx < sw.w; ++kx) {
                                const int iy = y + ky - pad, ix = xx + kx - pad;
                                if (iy < 0 || ix < 0 || iy >= si.h || ix >= si.w) continue;
                                acc += w(co, ci, ky, kx) * x(n, ci, iy, ix);
                            }
                    o[out.index(n, co, y, xx)] = acc;
                }
    return out;
}

}  // namespace

TEST(Conv2d, IdentityKernelIsIdentity) {
    Tensor<float> x({1, 1, 3, 3}, 1.0f);
    Tensor<float> w({1, 1, 1, 1}, 1.0f);
    auto y = conv2d(x, w, Tensor<float>(), 1, 0);
    EXPECT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
    EXPECT_TRUE(bitwise_equal(x, y));

    auto r = random_tensor<float>({2, 3, 5, 7}, 11);
    std::vector<float> eye(9, 0.0f);
    for (int c = 0; c < 3; ++c) eye[c * 3 + c] = 1.0f;
    auto yr = conv2d(r, Tensor<float>({3, 3, 1, 1}, eye), Tensor<float>(), 1, 0);
    EXPECT_TRUE(bitwise_equal(r, yr));
}

TEST(Conv2d, ConstantInputBoxKernel) {
    Tensor<float> x({1, 1, 4, 4}, 2.0f);
    Tensor<float> w({1, 1, 3, 3}, 1.0f);
    auto y = conv2d(x, w, Tensor<float>(), 1, 1);
    EXPECT_FLOAT_EQ(y(0, 0, 1, 1), 18.0f);
    EXPECT_FLOAT_EQ(y(0, 0, 2, 2), 18.0f);
    EXPECT_FLOAT_EQ(y(0, 0, 0, 0), 8.0f);
    EXPECT_FLOAT_EQ(y(0, 0, 3, 3), 8.0f);
    EXPECT_FLOAT_EQ(y(0, 0, 0, 1), 12.0f);
}

TEST(Conv2d, ShapeContract) {
    auto y = conv2d(Tensor<float>({2, 3, 8, 8}), Tensor<float>({5, 3, 3, 3}), Tensor<float>({1, 5, 1, 1}), 1, 1);
    EXPECT_EQ(y.shape(), (Shape{2, 5, 8, 8}));
    auto s = conv2d(Tensor<float>({1, 1, 9, 7}), Tensor<float>({1, 1, 3, 3}), Tensor<float>(), 2, 1);
    EXPECT_EQ(s.shape(), (Shape{1, 1, 5, 4}));
}

TEST(Conv2d, RejectsMismatchedChannels) {
    try {
        conv2d(Tensor<float>({1, 2, 4, 4}), Tensor<float>({1, 3, 3, 3}), Tensor<float>(), 1, 1);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("channels"), std::string::npos);
    }
    EXPECT_THROW(conv2d(Tensor<float>({1, 1, 4, 4}), Tensor<float>({1, 1, 2, 2}), Tensor<float>(), 1, 0), ShapeError);
}

TEST(Conv2d, MatchesDirectReference) {
    for (int pad : {0, 1, 2}) {
        auto x = random_tensor<double>({2, 3, 6, 5}, 1 + pad);
        auto w = random_tensor<double>({4, 3, 3, 3}, 7 + pad);
        auto b = random_tensor<double>({1, 4, 1, 1}, 9 + pad);
        auto got = conv2d(x, w, b, 1, pad);
        auto want = conv_reference(x, w, b, pad);
        ASSERT_EQ(got.shape(), want.shape());
        for (std::size_t i = 0; i < got.numel(); ++i) EXPECT_NEAR(got.values()[i], want.values()[i], 1e-12);
    }
}

TEST(PixelShuffle, PermutationLaw) {
    Tensor<float> x({1, 4, 1, 1}, std::vector<float>{10, 20, 30, 40});
    auto y = pixel_shuffle(x, 2);
    EXPECT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
    EXPECT_EQ(std::vector<float>(y.values().begin(), y.values().end()), (std::vector<float>{10, 20, 30, 40}));

    auto r = random_tensor<float>({2, 8, 3, 3}, 5);
    auto s = pixel_shuffle(r, 2);
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 2; ++c)
            for (int h = 0; h < 3; ++h)
                for (int w = 0; w < 3; ++w)
                    for (int a = 0; a < 2; ++a)
                        for (int b = 0; b < 2; ++b) EXPECT_EQ(s(n, c, h * 2 + a, w * 2 + b), r(n, c * 4 + a * 2 + b, h, w));
}

TEST(PixelShuffle, IdentityAndMultiset) {
    auto r = random_tensor<float>({1, 8, 3, 3}, 3);
    EXPECT_TRUE(bitwise_equal(pixel_shuffle(r, 1), r));
    auto s = pixel_shuffle(r, 2);
    std::vector<float> a(r.values().begin(), r.values().end()), b(s.values().begin(), s.values().end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
    EXPECT_TRUE(bitwise_equal(pixel_unshuffle(s, 2), r));
    auto big = random_tensor<float>({2, 3, 8, 12}, 4);
    EXPECT_TRUE(bitwise_equal(pixel_shuffle(pixel_unshuffle(big, 2), 2), big));
    EXPECT_THROW(pixel_shuffle(Tensor<float>({1, 3, 2, 2}), 2), ShapeError);
}

TEST(GlobalAvgPool, Means) {
    auto y = global_avg_pool(Tensor<float>({1, 2, 4, 4}, 5.0f));
    EXPECT_EQ(y.shape(), (Shape{1, 2, 1, 1}));
    EXPECT_FLOAT_EQ(y.values()[0], 5.0f);
    EXPECT_FLOAT_EQ(y.values()[1], 5.0f);
    Tensor<float> one({1, 1, 1, 1}, 3.25f);
    EXPECT_TRUE(bitwise_equal(global_avg_pool(one), one));
    EXPECT_FLOAT_EQ(global_avg_pool(Tensor<float>({1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4})).item(), 2.5f);
}

TEST(Elementwise, PointwiseAndBroadcast) {
    auto r = relu(Tensor<float>({1, 1, 1, 3}, std::vector<float>{-1, 0, 2}));
    EXPECT_EQ(std::vector<float>(r.values().begin(), r.values().end()), (std::vector<float>{0, 0, 2}));
    EXPECT_FLOAT_EQ(sigmoid(Tensor<float>({1, 1, 1, 1}, 0.0f)).item(), 0.5f);

    Tensor<float> ones({1, 2, 2, 2}, 1.0f);
    Tensor<float> gate({1, 2, 1, 1}, std::vector<float>{0.5f, 2.0f});
    auto m = mul(ones, gate);
    for (int h = 0; h < 2; ++h)
        for (int w = 0; w < 2; ++w) {
            EXPECT_EQ(m(0, 0, h, w), 0.5f);
            EXPECT_EQ(m(0, 1, h, w), 2.0f);
        }
    auto a = add(ones, gate);
    EXPECT_EQ(a(0, 1, 1, 0), 3.0f);
    EXPECT_EQ(scale(ones, 3.0f)(0, 1, 1, 1), 3.0f);
    EXPECT_THROW(mul(ones, Tensor<float>({1, 3, 1, 1})), ShapeError);
    EXPECT_THROW(add(ones, Tensor<float>({1, 2, 2, 1})), ShapeError);
}

TEST(L1Loss, Values) {
    Tensor<float> p({1, 1, 1, 2}, std::vector<float>{1, 2});
    Tensor<float> z({1, 1, 1, 2}, 0.0f);
    EXPECT_FLOAT_EQ(l1_loss(p, z).item(), 1.5f);
    EXPECT_FLOAT_EQ(l1_loss(z, p).item(), 1.5f);
    EXPECT_EQ(l1_loss(p, p).item(), 0.0f);
    EXPECT_THROW(l1_loss(p, Tensor<float>({1, 1, 2, 1})), ShapeError);
}

TEST(L1Loss, NonNegativeAndZeroOnlyOnEquality) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto a = random_tensor<float>({1, 2, 3, 3}, seed);
        auto b = a.clone();
        EXPECT_EQ(l1_loss(a, b).item(), 0.0f);
        b.mutable_values()[seed % b.numel()] += 0.25f;
        EXPECT_GT(l1_loss(a, b).item(), 0.0f);
    }
}

TEST(Backward, ScalarWeightExample) {
    Tensor<float> x({1, 1, 1, 1}, 2.0f);
    Tensor<float> w({1, 1, 1, 1}, 3.0f);
    w.set_requires_grad(true);
    Tape<float> tape;
    {
        auto scope = tape.activate();
        auto loss = l1_loss(conv2d(x, w, Tensor<float>(), 1, 0), Tensor<float>({1, 1, 1, 1}, 0.0f));
        tape.backward(loss);
    }
    EXPECT_FLOAT_EQ(w.grad()[0], 2.0f);
    EXPECT_EQ(tape.num_records(), 0u);
}

TEST(Backward, UnreachedLeafGetsZeros) {
    Tensor<float> used({1, 1, 2, 2}, 1.0f), unused({1, 2, 2, 2}, 4.0f);
    used.set_requires_grad(true);
    unused.set_requires_grad(true);
    Tape<float> tape;
    auto scope = tape.activate();
    auto loss = sum(used);
    tape.node_for(unused);
    tape.backward(loss);
    ASSERT_EQ(unused.grad().size(), unused.numel());
    for (float g : unused.grad()) EXPECT_EQ(g, 0.0f);
    for (float g : used.grad()) EXPECT_EQ(g, 1.0f);
}

TEST(Backward, RejectsUntracedLoss) {
    Tape<float> tape;
    Tensor<float> plain({1, 1, 1, 1}, 1.0f);
    EXPECT_THROW(tape.backward(plain), Error);
    auto scope = tape.activate();
    EXPECT_THROW(tape.backward(sum(plain)), Error);
}

TEST(Backward, LeafRegisteredOnce) {
    Tensor<float> w({1, 1, 2, 2}, 1.0f);
    w.set_requires_grad(true);
    Tape<float> tape;
    auto scope = tape.activate();
    auto y = add(mul(w, w), w);
    EXPECT_EQ(tape.num_leaves(), 1u);
    tape.backward(sum(y));
    for (float g : w.grad()) EXPECT_FLOAT_EQ(g, 3.0f);
}

TEST(Backward, StaleTensorAfterResetRejected) {
    Tensor<float> w({1, 1, 2, 2}, 1.0f);
    w.set_requires_grad(true);
    Tape<float> tape;
    auto scope = tape.activate();
    auto y = relu(w);
    tape.reset();
    EXPECT_THROW(relu(y), Error);
}

TEST(Backward, PixelShuffleGradIsUnshuffle) {
    auto x = random_tensor<float>({1, 8, 3, 3}, 21);
    x.set_requires_grad(true);
    auto upstream = random_tensor<float>({1, 2, 6, 6}, 22);
    Tape<float> tape;
    {
        auto scope = tape.activate();
        auto loss = sum(mul(pixel_shuffle(x, 2), upstream));
        tape.backward(loss);
    }
    auto expected = pixel_unshuffle(upstream, 2);
    ASSERT_EQ(x.grad().size(), expected.numel());
    for (std::size_t i = 0; i < expected.numel(); ++i) EXPECT_EQ(x.grad()[i], expected.values()[i]);
}

TEST(Backward, Deterministic) {
    auto run = [] {
        auto x = random_tensor<float>({2, 3, 9, 9}, 1);
        auto w = random_tensor<float>({4, 3, 3, 3}, 2);
        w.set_requires_grad(true);
        Tape<float> tape;
        auto scope = tape.activate();
        auto y = relu(conv2d(x, w, Tensor<float>(), 1, 1));
        auto loss = l1_loss(global_avg_pool(y), Tensor<float>({2, 4, 1, 1}, 0.1f));
        tape.backward(loss);
        return std::vector<float>(w.grad().begin(), w.grad().end());
    };
    EXPECT_EQ(run(), run());
}

TEST(GradCheck, LinearSumIsExact) {
    auto x = random_tensor<double>({1, 2, 3, 3}, 3);
    auto r = grad_check([](const Tensor<double>& t) { return sum(t); }, x, 1e-3);
    EXPECT_LT(r.max_rel_error, 1e-10);
    EXPECT_EQ(r.probes, x.numel());
}

TEST(GradCheck, ConvReluL1Composite) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto x = random_tensor<double>({1, 2, 5, 5}, seed);
        auto w = random_tensor<double>({3, 2, 3, 3}, seed + 100);
        auto b = random_tensor<double>({1, 3, 1, 1}, seed + 200);
        auto target = random_tensor<double>({1, 3, 5, 5}, seed + 300);
        w.set_requires_grad(true);
        b.set_requires_grad(true);
        auto xl = x.clone();
        xl.set_requires_grad(true);
        Tensor<double> leaves[] = {xl, w, b};
        auto r = grad_check([&] { return l1_loss(relu(conv2d(xl, w, b, 1, 1)), target); }, leaves, {});
        EXPECT_LT(r.max_rel_error, 1e-4) << "seed " << seed;
        EXPECT_GT(r.probes, 0.9 * (r.probes + r.straddled));
    }
}

TEST(GradCheck, SigmoidChain) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto x = random_tensor<double>({1, 3, 4, 4}, seed);
        auto gate = random_tensor<double>({1, 3, 1, 1}, seed + 50);
        auto r = grad_check(
            [&](const Tensor<double>& t) {
                auto g = sigmoid(add(global_avg_pool(t), gate));
                return sum(mul(sigmoid(scale(t, 1.5)), g));
            },
            x, 1e-4);
        EXPECT_LT(r.max_rel_error, 1e-4) << "seed " << seed;
    }
}

TEST(GradCheck, PixelShuffleAndBroadcastAdd) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto x = random_tensor<double>({2, 8, 3, 3}, seed);
        auto bias = random_tensor<double>({2, 2, 1, 1}, seed + 1);
        bias.set_requires_grad(true);
        auto xl = x.clone();
        xl.set_requires_grad(true);
        auto weights = random_tensor<double>({2, 2, 6, 6}, seed + 2);
        Tensor<double> leaves[] = {xl, bias};
        auto r = grad_check([&] { return sum(mul(add(pixel_shuffle(xl, 2), bias), weights)); }, leaves, {});
        EXPECT_LT(r.max_rel_error, 1e-4);
    }
}

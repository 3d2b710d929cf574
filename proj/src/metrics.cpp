#include "dasr/metrics.hpp"

#include <cmath>
#include <vector>

namespace dasr {

namespace {

// Sums a row pairing element x with its mirror W-1-x, so the result is
// bitwise identical for the horizontally flipped row.
template <class F>
double mirrored_row_sum(int width, F&& value) {
    double acc = 0.0;
    for (int x = 0; x < width / 2; ++x) acc += value(x) + value(width - 1 - x);
    if (width % 2 == 1) acc += value(width / 2);
    return acc;
}

void require_same(const Tensor<float>& a, const Tensor<float>& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": shape " + a.shape().str() + " does not match " + b.shape().str());
    }
    if (a.numel() == 0) throw ShapeError(std::string(what) + ": empty images");
}

// Valid-mode 1-D filtering with a symmetric window, taps paired around
// the center so mirrored inputs give mirrored, bitwise-equal outputs.
void filter_valid(const double* src, int len, int stride, const std::vector<double>& g, double* dst, int dst_stride) {
    const int ws = static_cast<int>(g.size());
    const int r = ws / 2;
    for (int i = 0; i + ws <= len; ++i) {
        const double* s = src + static_cast<std::ptrdiff_t>(i) * stride;
        double acc = g[r] * s[static_cast<std::ptrdiff_t>(r) * stride];
        for (int k = 0; k < r; ++k) {
            acc += g[k] * (s[static_cast<std::ptrdiff_t>(k) * stride] + s[static_cast<std::ptrdiff_t>(ws - 1 - k) * stride]);
        }
        dst[static_cast<std::ptrdiff_t>(i) * dst_stride] = acc;
    }
}

}  // namespace

double mse(const Tensor<float>& a, const Tensor<float>& b) {
    require_same(a, b, "mse");
    const Shape& s = a.shape();
    const float* pa = a.data();
    const float* pb = b.data();
    double total = 0.0;
    for (std::size_t row = 0; row < static_cast<std::size_t>(s.n) * s.c * s.h; ++row) {
        const float* ra = pa + row * s.w;
        const float* rb = pb + row * s.w;
        total += mirrored_row_sum(s.w, [&](int x) {
            const double d = static_cast<double>(ra[x]) - static_cast<double>(rb[x]);
            return d * d;
        });
    }
    return total / static_cast<double>(a.numel());
}

double psnr_from_mse(double m, double peak) {
    if (!(peak > 0.0)) throw Error("psnr: peak must be positive");
    if (m == 0.0) return kInfinitePsnr;
    return 10.0 * std::log10(peak * peak / m);
}

double psnr(const Tensor<float>& a, const Tensor<float>& b, double peak) {
    return psnr_from_mse(mse(a, b), peak);
}

double ssim(const Tensor<float>& a, const Tensor<float>& b, const SsimParams& p) {
    require_same(a, b, "ssim");
    if (p.window_size < 1 || p.window_size % 2 == 0) throw Error("ssim: window size must be odd");
    if (!(p.k1 > 0.0) || !(p.k2 > 0.0)) throw Error("ssim: k1 and k2 must be positive");
    const Shape& s = a.shape();
    const int ws = p.window_size;
    if (s.h < ws || s.w < ws) {
        throw ShapeError("ssim: image " + s.str() + " is smaller than the " + std::to_string(ws) + "x" +
                         std::to_string(ws) + " window");
    }

    std::vector<double> g(static_cast<std::size_t>(ws));
    const int r = ws / 2;
    double gsum = 0.0;
    for (int k = 0; k < ws; ++k) {
        g[k] = std::exp(-static_cast<double>((k - r) * (k - r)) / (2.0 * p.window_sigma * p.window_sigma));
        gsum += g[k];
    }
    for (auto& v : g) v /= gsum;

    const double c1 = (p.k1 * p.peak) * (p.k1 * p.peak);
    const double c2 = (p.k2 * p.peak) * (p.k2 * p.peak);
    const int vh = s.h - ws + 1, vw = s.w - ws + 1;
    const std::size_t plane = s.plane();

    // Filtered maps of a, b, a², b², ab.
    std::vector<double> src(5 * plane);
    std::vector<double> horiz(5 * static_cast<std::size_t>(s.h) * vw);
    std::vector<double> stats(5 * static_cast<std::size_t>(vh) * vw);
    std::vector<double> map(static_cast<std::size_t>(vh) * vw);

    double total = 0.0;
    for (int pl = 0; pl < s.n * s.c; ++pl) {
        const float* pa = a.data() + static_cast<std::size_t>(pl) * plane;
        const float* pb = b.data() + static_cast<std::size_t>(pl) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            const double va = pa[i], vb = pb[i];
            src[i] = va;
            src[plane + i] = vb;
            src[2 * plane + i] = va * va;
            src[3 * plane + i] = vb * vb;
            src[4 * plane + i] = va * vb;
        }
        for (int m = 0; m < 5; ++m) {
            const double* in = src.data() + m * plane;
            double* hout = horiz.data() + static_cast<std::size_t>(m) * s.h * vw;
            for (int y = 0; y < s.h; ++y) filter_valid(in + static_cast<std::size_t>(y) * s.w, s.w, 1, g, hout + static_cast<std::size_t>(y) * vw, 1);
            double* vout = stats.data() + static_cast<std::size_t>(m) * vh * vw;
            for (int x = 0; x < vw; ++x) filter_valid(hout + x, s.h, vw, g, vout + x, vw);
        }
        const std::size_t vplane = static_cast<std::size_t>(vh) * vw;
        for (std::size_t i = 0; i < vplane; ++i) {
            const double mu_a = stats[i];
            const double mu_b = stats[vplane + i];
            const double var_a = stats[2 * vplane + i] - mu_a * mu_a;
            const double var_b = stats[3 * vplane + i] - mu_b * mu_b;
            const double cov = stats[4 * vplane + i] - mu_a * mu_b;
            map[i] = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
                     ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
        }
        double plane_sum = 0.0;
        for (int y = 0; y < vh; ++y) {
            const double* row = map.data() + static_cast<std::size_t>(y) * vw;
            plane_sum += mirrored_row_sum(vw, [&](int x) { return row[x]; });
        }
        total += plane_sum / static_cast<double>(vplane);
    }
    return total / static_cast<double>(s.n * s.c);
}

}  // namespace dasr

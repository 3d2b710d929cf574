#include "dasr/degradation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "dasr/rng.hpp"

namespace dasr {

namespace {

template <class... Fs>
struct Overloaded : Fs... {
    using Fs::operator()...;
};
template <class... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

struct AxisTaps {
    int taps = 0;
    std::vector<int> index;      // out_len * taps, clamped source indices
    std::vector<double> weight;  // out_len * taps, each row sums to 1
};

AxisTaps axis_taps(int in_len, int out_len, double scale, bool antialias) {
    const double kscale = (antialias && scale < 1.0) ? scale : 1.0;
    const double support = 2.0 / kscale;
    AxisTaps t;
    t.taps = static_cast<int>(std::ceil(2.0 * support)) + 2;
    t.index.resize(static_cast<std::size_t>(out_len) * t.taps);
    t.weight.resize(static_cast<std::size_t>(out_len) * t.taps);
    for (int i = 0; i < out_len; ++i) {
        const double center = (i + 0.5) / scale - 0.5;
        const int first = static_cast<int>(std::floor(center - support));
        double total = 0.0;
        for (int k = 0; k < t.taps; ++k) {
            const int j = first + k;
            const double w = bicubic_weight((center - j) * kscale);
            t.index[static_cast<std::size_t>(i) * t.taps + k] = std::clamp(j, 0, in_len - 1);
            t.weight[static_cast<std::size_t>(i) * t.taps + k] = w;
            total += w;
        }
        for (int k = 0; k < t.taps; ++k) t.weight[static_cast<std::size_t>(i) * t.taps + k] /= total;
    }
    return t;
}

int scaled_extent(int len, double scale) {
    const double exact = len * scale;
    const long rounded = std::lround(exact);
    if (rounded < 1 || std::abs(exact - static_cast<double>(rounded)) > 1e-9) {
        throw ShapeError("resample_bicubic: extent " + std::to_string(len) + " times scale " + std::to_string(scale) +
                         " is not a positive integer");
    }
    return static_cast<int>(rounded);
}

}  // namespace

DegradationSpec::DegradationSpec(std::vector<DegradationStep> steps)
    : steps_(std::move(steps)) {
    for (const auto& s : steps_) validate_step(s);
}

void validate_step(const DegradationStep& step) {
    std::visit(Overloaded{
                   [](const BicubicDown& s) {
                       if (s.scale != 2 && s.scale != 4) throw Error("bicubic_down: scale must be 2 or 4");
                   },
                   [](const BicubicUp& s) {
                       if (s.scale != 2 && s.scale != 4) throw Error("bicubic_up: scale must be 2 or 4");
                   },
                   [](const Blur& s) {
                       if (s.size < 1 || s.size % 2 == 0) throw Error("blur: size must be odd and positive");
                       if (!(s.sigma > 0.0)) throw Error("blur: sigma must be positive");
                   },
                   [](const Noise& s) {
                       if (!std::isfinite(s.target_psnr_db)) throw Error("noise: target PSNR must be finite");
                   },
               },
               step);
}

std::string step_label(const DegradationStep& step) {
    return std::visit(Overloaded{
                          [](const BicubicDown& s) { return "bicubic_down" + std::to_string(s.scale); },
                          [](const BicubicUp& s) { return "bicubic_up" + std::to_string(s.scale); },
                          [](const Blur& s) {
                              std::string label = "blur" + std::to_string(s.size);
                              if (std::abs(s.sigma - default_blur_sigma(s.size)) > 1e-12) {
                                  std::ostringstream os;
                                  os << "s" << s.sigma;
                                  label += os.str();
                              }
                              return label;
                          },
                          [](const Noise& s) {
                              std::ostringstream os;
                              os << "noise" << s.target_psnr_db;
                              return os.str();
                          },
                      },
                      step);
}

ScaleRatio DegradationSpec::net_scale() const {
    ScaleRatio r;
    for (const auto& s : steps_) {
        if (const auto* d = std::get_if<BicubicDown>(&s)) r.den *= d->scale;
        if (const auto* u = std::get_if<BicubicUp>(&s)) r.num *= u->scale;
    }
    const int g = std::gcd(r.num, r.den);
    return {r.num / g, r.den / g};
}

std::string DegradationSpec::label() const {
    if (steps_.empty()) return "identity";
    std::string out;
    for (const auto& s : steps_) {
        if (!out.empty()) out += '+';
        out += step_label(s);
    }
    return out;
}

double default_blur_sigma(int size) { return (size - 1) / 4.0; }

double bicubic_weight(double x, double a) {
    const double ax = std::abs(x);
    if (ax <= 1.0) return ((a + 2.0) * ax - (a + 3.0)) * ax * ax + 1.0;
    if (ax < 2.0) return ((a * ax - 5.0 * a) * ax + 8.0 * a) * ax - 4.0 * a;
    return 0.0;
}

Tensor<float> resample_bicubic(const Tensor<float>& image, double scale, bool antialias) {
    const Shape& s = image.shape();
    if (s.n <= 0 || s.c <= 0 || s.h <= 0 || s.w <= 0) {
        throw ShapeError("resample_bicubic: non-positive dimensions in " + s.str());
    }
    if (!(scale > 0.0)) throw ShapeError("resample_bicubic: scale must be positive");
    const int oh = scaled_extent(s.h, scale);
    const int ow = scaled_extent(s.w, scale);
    const AxisTaps tx = axis_taps(s.w, ow, scale, antialias);
    const AxisTaps ty = axis_taps(s.h, oh, scale, antialias);

    const Shape so{s.n, s.c, oh, ow};
    std::vector<float> out(so.numel());
    std::vector<double> rows(static_cast<std::size_t>(s.h) * ow);
    const float* src = image.data();
    for (int p = 0; p < s.n * s.c; ++p) {
        const float* plane = src + static_cast<std::size_t>(p) * s.plane();
        for (int y = 0; y < s.h; ++y) {
            const float* row = plane + static_cast<std::size_t>(y) * s.w;
            for (int x = 0; x < ow; ++x) {
                double acc = 0.0;
                for (int k = 0; k < tx.taps; ++k) {
                    const std::size_t t = static_cast<std::size_t>(x) * tx.taps + k;
                    acc += tx.weight[t] * row[tx.index[t]];
                }
                rows[static_cast<std::size_t>(y) * ow + x] = acc;
            }
        }
        float* o = out.data() + static_cast<std::size_t>(p) * oh * ow;
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                double acc = 0.0;
                for (int k = 0; k < ty.taps; ++k) {
                    const std::size_t t = static_cast<std::size_t>(y) * ty.taps + k;
                    acc += ty.weight[t] * rows[static_cast<std::size_t>(ty.index[t]) * ow + x];
                }
                o[static_cast<std::size_t>(y) * ow + x] = static_cast<float>(std::clamp(acc, 0.0, 1.0));
            }
        }
    }
    return Tensor<float>(so, std::move(out));
}

BlurKernel blur_kernel(int size, double sigma) {
    if (size < 1 || size % 2 == 0) throw Error("blur_kernel: size must be odd and positive, got " + std::to_string(size));
    if (!(sigma > 0.0)) throw Error("blur_kernel: sigma must be positive");
    const int r = size / 2;
    BlurKernel k{size, std::vector<double>(static_cast<std::size_t>(size) * size)};
    double total = 0.0;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const int d2 = (y - r) * (y - r) + (x - r) * (x - r);
            const double v = std::exp(-static_cast<double>(d2) / (2.0 * sigma * sigma));
            k.weights[static_cast<std::size_t>(y) * size + x] = v;
            total += v;
        }
    for (auto& v : k.weights) v /= total;
    return k;
}

Tensor<float> blur(const Tensor<float>& image, const BlurKernel& kernel) {
    const Shape& s = image.shape();
    if (kernel.size < 1 || kernel.weights.size() != static_cast<std::size_t>(kernel.size) * kernel.size) {
        throw ShapeError("blur: malformed kernel");
    }
    if (s.h < 1 || s.w < 1) throw ShapeError("blur: empty image " + s.str());
    const int r = kernel.size / 2;
    std::vector<float> out(s.numel());
    const float* src = image.data();
    for (int p = 0; p < s.n * s.c; ++p) {
        const float* plane = src + static_cast<std::size_t>(p) * s.plane();
        float* o = out.data() + static_cast<std::size_t>(p) * s.plane();
        for (int y = 0; y < s.h; ++y) {
            for (int x = 0; x < s.w; ++x) {
                double acc = 0.0;
                for (int ky = 0; ky < kernel.size; ++ky) {
                    const int yy = std::clamp(y + ky - r, 0, s.h - 1);
                    const float* row = plane + static_cast<std::size_t>(yy) * s.w;
                    for (int kx = 0; kx < kernel.size; ++kx) {
                        acc += kernel.at(ky, kx) * row[std::clamp(x + kx - r, 0, s.w - 1)];
                    }
                }
                o[static_cast<std::size_t>(y) * s.w + x] = static_cast<float>(acc);
            }
        }
    }
    return Tensor<float>(s, std::move(out));
}

double noise_sigma(double target_psnr_db) { return std::pow(10.0, -target_psnr_db / 20.0); }

Tensor<float> add_noise(const Tensor<float>& image, double target_psnr_db, std::uint64_t seed) {
    const double sigma = noise_sigma(target_psnr_db);
    Rng rng(seed);
    std::vector<float> out(image.values().begin(), image.values().end());
    for (auto& v : out) v = static_cast<float>(std::clamp(v + sigma * rng.normal(), 0.0, 1.0));
    return Tensor<float>(image.shape(), std::move(out));
}

Tensor<float> apply(const DegradationSpec& spec, const Tensor<float>& image, std::uint64_t stream) {
    Tensor<float> cur = image;
    for (const auto& step : spec.steps()) {
        cur = std::visit(Overloaded{
                             [&](const BicubicDown& s) { return resample_bicubic(cur, 1.0 / s.scale, true); },
                             [&](const BicubicUp& s) { return resample_bicubic(cur, s.scale, true); },
                             [&](const Blur& s) { return blur(cur, blur_kernel(s.size, s.sigma)); },
                             [&](const Noise& s) {
                                 const std::uint64_t seed = stream == 0 ? s.seed : mix_seed(s.seed, stream);
                                 return add_noise(cur, s.target_psnr_db, seed);
                             },
                         },
                         step);
    }
    return cur;
}

}  // namespace dasr

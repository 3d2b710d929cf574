#include "dasr/datasets.hpp"

#include <fnmatch.h>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>

#include "dasr/image_io.hpp"
#include "dasr/rng.hpp"

namespace dasr {

namespace {


void check_pair(const ImagePair& p, int scale) {
    const Shape& si = p.input.pixels.shape();
    const Shape& st = p.target.pixels.shape();
    if (si.n != 1 || st.n != 1 || si.c != st.c || st.h != si.h * scale || st.w != si.w * scale) {
        throw ShapeError("pair '" + p.input.id + "': target " + st.str() + " is not input " + si.str() + " x" +
                         std::to_string(scale));
    }
}

// Ratio of two net scales; must be a positive integer.
int integer_ratio(ScaleRatio to, ScaleRatio from) {
    const long num = static_cast<long>(to.num) * from.den;
    const long den = static_cast<long>(to.den) * from.num;
    if (num % den != 0) return 0;
    return static_cast<int>(num / den);
}

}  // namespace

void PairedDataset::validate() const {
    if (scale < 1) throw Error("paired dataset: scale must be >= 1");
    for (const auto& p : pairs) check_pair(p, scale);
}

std::uint64_t noise_stream(const std::string& id) noexcept {
    return name_hash(id) | 1u;  // never 0, which would reuse the spec seed verbatim
}

LoadResult load_dir(const std::filesystem::path& dir, const std::string& pattern, int min_extent) {
    if (!std::filesystem::is_directory(dir)) throw Error("load_dir: '" + dir.string() + "' is not a directory");
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        if (fnmatch(pattern.c_str(), entry.path().filename().c_str(), 0) == 0) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    LoadResult result;
    for (const auto& f : files) {
        try {
            Tensor<float> px = read_png(f);
            const Shape& s = px.shape();
            if (s.h < min_extent || s.w < min_extent) {
                throw Error("image " + std::to_string(s.h) + "x" + std::to_string(s.w) + " is smaller than " +
                            std::to_string(min_extent) + "x" + std::to_string(min_extent));
            }
            result.records.push_back({f.stem().string(), std::move(px), f.string()});
        } catch (const Error& e) {
            std::cerr << "warning: skipping " << f.string() << ": " << e.what() << "\n";
            result.skipped.push_back({f.string(), e.what()});
        }
    }
    if (result.records.empty()) {
        throw Error("load_dir: no loadable images matching '" + pattern + "' in '" + dir.string() + "'");
    }
    return result;
}

std::string manifest_text(const LoadResult& result) {
    std::string out;
    for (const auto& r : result.records) out += r.id + "\t" + r.provenance + "\n";
    for (const auto& s : result.skipped) out += "skipped\t" + s.path + "\t" + s.reason + "\n";
    return out;
}

std::vector<ImageRecord> synth_corpus(int n, int size, std::uint64_t seed) {
    if (n < 1) throw Error("synth_corpus: n must be >= 1");
    if (size < 64 || size % 4 != 0) throw Error("synth_corpus: size must be >= 64 and divisible by 4");
    constexpr double two_pi = 2.0 * std::numbers::pi;
    std::vector<ImageRecord> out;
    out.reserve(static_cast<std::size_t>(n));
    const std::size_t plane = static_cast<std::size_t>(size) * size;
    for (int i = 0; i < n; ++i) {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
        std::vector<double> acc(3 * plane, 0.0);
        auto color = [&](double amp, double* c) {
            for (int k = 0; k < 3; ++k) c[k] = amp * (0.4 + 0.6 * rng.uniform()) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
        };

        // Band-limited sinusoids: 0.04..0.22 cycles/pixel, random orientation.
        const int waves = 3 + rng.uniform_int(3);
        for (int k = 0; k < waves; ++k) {
            const double f = 0.04 + 0.18 * rng.uniform();
            const double theta = std::numbers::pi * rng.uniform();
            const double phase = two_pi * rng.uniform();
            const double fx = f * std::cos(theta), fy = f * std::sin(theta);
            double c[3];
            color(0.09, c);
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    const double s = std::sin(two_pi * (fx * x + fy * y) + phase);
                    for (int ch = 0; ch < 3; ++ch) acc[ch * plane + static_cast<std::size_t>(y) * size + x] += c[ch] * s;
                }
        }

        // Smooth Gaussian blobs.
        const int blobs = 4 + rng.uniform_int(5);
        for (int k = 0; k < blobs; ++k) {
            const double cy = size * rng.uniform(), cx = size * rng.uniform();
            const double r = 2.0 + 0.12 * size * rng.uniform();
            double c[3];
            color(0.25, c);
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
                    const double g = std::exp(-d2 / (2.0 * r * r));
                    for (int ch = 0; ch < 3; ++ch) acc[ch * plane + static_cast<std::size_t>(y) * size + x] += c[ch] * g;
                }
        }

        // Oriented edges: half-planes with a sub-pixel soft transition.
        const int edges = 2 + rng.uniform_int(3);
        for (int k = 0; k < edges; ++k) {
            const double theta = two_pi * rng.uniform();
            const double nx = std::cos(theta), ny = std::sin(theta);
            const double offset = (rng.uniform() - 0.5) * 0.6 * size;
            double c[3];
            color(0.18, c);
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    const double d = (x - 0.5 * size) * nx + (y - 0.5 * size) * ny - offset;
                    const double step = 1.0 / (1.0 + std::exp(-d / 0.35)) - 0.5;
                    for (int ch = 0; ch < 3; ++ch) acc[ch * plane + static_cast<std::size_t>(y) * size + x] += c[ch] * step;
                }
        }

        Tensor<float> px({1, 3, size, size});
        auto v = px.mutable_values();
        for (std::size_t k = 0; k < acc.size(); ++k) v[k] = static_cast<float>(std::clamp(0.5 + acc[k], 0.0, 1.0));
        out.push_back({"synth-" + std::to_string(seed) + "-" + std::to_string(i), std::move(px),
                       "synthetic seed " + std::to_string(seed) + " index " + std::to_string(i)});
    }
    return out;
}

PairedDataset make_pairs(const std::vector<ImageRecord>& gt, const DegradationSpec& spec, int scale) {
    if (scale < 1) throw Error("make_pairs: scale must be >= 1");
    if (!(spec.net_scale() == ScaleRatio{1, scale})) {
        const ScaleRatio r = spec.net_scale();
        throw Error("make_pairs: spec '" + spec.label() + "' scales by " + std::to_string(r.num) + "/" +
                    std::to_string(r.den) + ", expected 1/" + std::to_string(scale));
    }
    PairedDataset d;
    d.scale = scale;
    d.input_domain = spec.label();
    d.target_domain = "GT";
    for (const auto& g : gt) {
        ImageRecord in{g.id, apply(spec, g.pixels, noise_stream(g.id)), g.provenance + " | " + spec.label()};
        d.pairs.push_back({std::move(in), g});
        check_pair(d.pairs.back(), scale);
    }
    return d;
}

PairedDataset make_mapping_pairs(const std::vector<ImageRecord>& gt, const DegradationSpec& from,
                                 const DegradationSpec& to) {
    const int scale = integer_ratio(to.net_scale(), from.net_scale());
    if (scale != 1 && scale != 2) {
        throw Error("make_mapping_pairs: '" + to.label() + "' must be the resolution of '" + from.label() +
                    "' or twice it");
    }
    PairedDataset d;
    d.scale = scale;
    d.input_domain = from.label();
    d.target_domain = to.label();
    for (const auto& g : gt) {
        const std::uint64_t stream = noise_stream(g.id);
        ImageRecord in{g.id, apply(from, g.pixels, stream), g.provenance + " | " + from.label()};
        ImageRecord out{g.id, apply(to, g.pixels, stream), g.provenance + " | " + to.label()};
        d.pairs.push_back({std::move(in), std::move(out)});
        check_pair(d.pairs.back(), scale);
    }
    return d;
}

Split split(const std::vector<ImageRecord>& records, std::size_t n_train) {
    if (n_train > records.size()) throw Error("split: more training images requested than available");
    Split s;
    s.train.assign(records.begin(), records.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.held_out.assign(records.begin() + static_cast<std::ptrdiff_t>(n_train), records.end());
    return s;
}

}  // namespace dasr

#include "dasr/report.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "dasr/metrics.hpp"

namespace dasr {

namespace {

std::string printf_str(const char* fmt, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, fmt, v);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string models_field(const MetricsReport& r) {
    std::string out;
    for (const auto& [key, digest] : r.digests) {
        if (!out.empty()) out += ';';
        out += key + ":" + digest;
    }
    return out;
}

// Distinct values in first-appearance order.
template <class F>
std::vector<std::string> ordered_unique(std::span<const MetricsReport> reports, F&& field) {
    std::vector<std::string> out;
    for (const auto& r : reports) {
        const std::string& v = field(r);
        if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
    }
    return out;
}

const MetricsReport* lookup(std::span<const MetricsReport> reports, const std::string& condition,
                            const std::string& test_set) {
    for (const auto& r : reports)
        if (r.condition == condition && r.test_set == test_set) return &r;
    return nullptr;
}

}  // namespace

double MetricsReport::mean_psnr() const {
    if (images.empty()) return std::nan("");
    double acc = 0.0;
    for (const auto& s : images) acc += s.psnr;
    return acc / static_cast<double>(images.size());
}

double MetricsReport::pooled_psnr() const {
    if (images.empty()) return std::nan("");
    double acc = 0.0;
    for (const auto& s : images) acc += s.mse;
    return psnr_from_mse(acc / static_cast<double>(images.size()));
}

double MetricsReport::mean_ssim() const {
    if (images.empty()) return std::nan("");
    double acc = 0.0;
    for (const auto& s : images) acc += s.ssim;
    return acc / static_cast<double>(images.size());
}

MetricsReport evaluate(const std::string& condition, const std::string& test_set,
                       const std::function<Tensor<float>(const Tensor<float>&)>& restore, const PairedDataset& test) {
    const auto start = std::chrono::steady_clock::now();
    MetricsReport report;
    report.condition = condition;
    report.test_set = test_set;
    for (const auto& pair : test.pairs) {
        const Tensor<float> out = restore(pair.input.pixels);
        const Tensor<float>& gt = pair.target.pixels;
        const double m = mse(out, gt);
        report.images.push_back({pair.target.id, psnr_from_mse(m), ssim(out, gt), m});
    }
    report.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

std::string format_db(double value, int decimals) {
    if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
    if (std::isnan(value)) return "nan";
    char fmt[16];
    std::snprintf(fmt, sizeof fmt, "%%.%df", decimals);
    return printf_str(fmt, value);
}

std::string reports_csv(std::span<const MetricsReport> reports) {
    std::string out = "condition,test_set,image,psnr_db,ssim,mse,models\n";
    for (const auto& r : reports) {
        const std::string models = csv_field(models_field(r));
        for (const auto& s : r.images) {
            out += csv_field(r.condition) + "," + csv_field(r.test_set) + "," + csv_field(s.id) + "," +
                   format_db(s.psnr, 6) + "," + printf_str("%.6f", s.ssim) + "," + printf_str("%.9e", s.mse) + "," +
                   models + "\n";
        }
    }
    return out;
}

std::string reports_markdown(std::span<const MetricsReport> reports, TableLayout layout) {
    const auto conditions = ordered_unique(reports, [](const MetricsReport& r) -> const std::string& { return r.condition; });
    const auto test_sets = ordered_unique(reports, [](const MetricsReport& r) -> const std::string& { return r.test_set; });
    struct Metric {
        const char* name;
        std::string (*render)(const MetricsReport&);
    };
    const Metric metrics[] = {
        {"PSNR (dB)", [](const MetricsReport& r) { return format_db(r.mean_psnr()); }},
        {"pooled PSNR (dB)", [](const MetricsReport& r) { return format_db(r.pooled_psnr()); }},
        {"SSIM", [](const MetricsReport& r) { return format_db(r.mean_ssim(), 4); }},
    };

    std::string out;
    if (layout == TableLayout::conditions_as_rows) {
        out += "| condition |";
        std::string rule = "|---|";
        for (const auto& t : test_sets)
            for (const auto& m : metrics) {
                out += " " + t + " " + m.name + " |";
                rule += "---:|";
            }
        out += "\n" + rule + "\n";
        for (const auto& c : conditions) {
            out += "| " + c + " |";
            for (const auto& t : test_sets) {
                const MetricsReport* r = lookup(reports, c, t);
                for (const auto& m : metrics) out += " " + (r ? m.render(*r) : std::string("n/a")) + " |";
            }
            out += "\n";
        }
        return out;
    }
    for (const auto& t : test_sets) {
        if (!out.empty()) out += "\n";
        out += "| " + t + " |";
        std::string rule = "|---|";
        for (const auto& c : conditions) {
            out += " " + c + " |";
            rule += "---:|";
        }
        out += "\n" + rule + "\n";
        for (const auto& m : metrics) {
            out += std::string("| ") + m.name + " |";
            for (const auto& c : conditions) {
                const MetricsReport* r = lookup(reports, c, t);
                out += " " + (r ? m.render(*r) : std::string("n/a")) + " |";
            }
            out += "\n";
        }
    }
    return out;
}

}  // namespace dasr

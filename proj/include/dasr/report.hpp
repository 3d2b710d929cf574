#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dasr/datasets.hpp"

namespace dasr {

struct ImageScore {
    std::string id;
    double psnr = 0.0;  // dB; +inf for an exact match
    double ssim = 0.0;
    double mse = 0.0;
};

/// Scores of one condition on one test set. Aggregates are computed from
/// the rows on demand, never stored separately.
struct MetricsReport {
    std::string condition;
    std::string test_set;
    std::vector<ImageScore> images;
    std::map<std::string, std::string> digests;  // stage key -> parameter digest
    double runtime_seconds = 0.0;

    double mean_psnr() const;    // mean of per-image dB
    double pooled_psnr() const;  // PSNR of the mean MSE
    double mean_ssim() const;
};

MetricsReport evaluate(const std::string& condition, const std::string& test_set,
                       const std::function<Tensor<float>(const Tensor<float>&)>& restore, const PairedDataset& test);

// "inf" for infinity, otherwise fixed with `decimals` places.
std::string format_db(double value, int decimals = 3);

// One row per image. Runtime is left out so reruns produce equal bytes.
std::string reports_csv(std::span<const MetricsReport> reports);

enum class TableLayout {
    conditions_as_rows,     // one row per condition, metric columns per test set
    conditions_as_columns,  // one column per condition, one row per metric
};
std::string reports_markdown(std::span<const MetricsReport> reports, TableLayout layout);

}  // namespace dasr

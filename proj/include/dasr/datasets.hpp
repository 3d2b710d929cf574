#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dasr/degradation.hpp"
#include "dasr/tensor.hpp"

namespace dasr {

struct ImageRecord {
    std::string id;
    Tensor<float> pixels;  // (1, 3, H, W) in [0, 1]
    std::string provenance;
};

struct ImagePair {
    ImageRecord input;
    ImageRecord target;
};

// Every target is exactly `scale` times its input in both dimensions.
struct PairedDataset {
    std::vector<ImagePair> pairs;
    int scale = 1;
    std::string input_domain;
    std::string target_domain;

    void validate() const;
    std::size_t size() const noexcept { return pairs.size(); }
};

struct SkippedFile {
    std::string path;
    std::string reason;
};

struct LoadResult {
    std::vector<ImageRecord> records;
    std::vector<SkippedFile> skipped;
};

/// PNG files in `dir` whose names match the glob `pattern` (`*` and `?`),
/// decoded in lexicographic name order. Undecodable files and images
/// smaller than `min_extent` on a side are skipped with a warning on
/// stderr and listed in `skipped`; throws when nothing loads.
inline constexpr int kCorpusMinExtent = 32;
LoadResult load_dir(const std::filesystem::path& dir, const std::string& pattern = "*.png",
                    int min_extent = kCorpusMinExtent);

// "id<TAB>provenance" per record, then "skipped<TAB>path<TAB>reason" lines.
std::string manifest_text(const LoadResult& result);

/// Procedural test images mixing band-limited sinusoids, smoothed random
/// blobs and oriented edges. Image i depends only on (seed, i).
std::vector<ImageRecord> synth_corpus(int n, int size, std::uint64_t seed);

/// Inputs are apply(spec, gt) with noise stream i for image i; targets
/// are the GT images. The spec must shrink images by exactly `scale`.
// Noise stream for the image `id`; every pair builder degrades with it.
std::uint64_t noise_stream(const std::string& id) noexcept;

PairedDataset make_pairs(const std::vector<ImageRecord>& gt, const DegradationSpec& spec, int scale);

/// Inputs apply(from, gt), targets apply(to, gt); `to` must be the same
/// resolution as `from` or twice it.
PairedDataset make_mapping_pairs(const std::vector<ImageRecord>& gt, const DegradationSpec& from,
                                 const DegradationSpec& to);

struct Split {
    std::vector<ImageRecord> train;
    std::vector<ImageRecord> held_out;
};

// First `n_train` records train, the rest are held out.
Split split(const std::vector<ImageRecord>& records, std::size_t n_train);

}  // namespace dasr

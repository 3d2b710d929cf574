#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dasr/config.hpp"
#include "dasr/pipeline.hpp"

namespace dasr {

// Either a synthetic corpus or a directory of PNGs. The first `n_train`
// records train; the rest are held out.
struct CorpusConfig {
    struct Synth {
        int n = 48;
        int size = 64;
        std::uint64_t seed = 11;
    };
    std::optional<Synth> synth;
    std::string dir;
    std::string pattern = "*.png";
    int n_train = 0;
};

struct ExperimentConfig {
    std::vector<BranchSpec> branches;
    std::string model = "desk";
    std::string unknown = "unknown";
    std::string cross_unknown;
    std::uint64_t seed = 1;
    std::string output_dir = "dasr-out";
    TableLayout layout = TableLayout::conditions_as_rows;
    bool bicubic_baseline = true;
};

/// The whole document. Every name the experiment references is checked
/// to resolve when parsing, before anything runs.
struct RunConfig {
    CorpusConfig corpus;
    std::optional<CorpusConfig> cross_corpus;
    std::map<std::string, DegradationSpec> degradations;
    std::map<std::string, ModelConfig> models;
    TrainConfig training;
    std::map<std::string, TrainConfig> training_overrides;  // by model key
    ExperimentConfig experiment;
};

RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);  // ConfigError on parse failure

std::vector<std::string> preset_names();
RunConfig preset(const std::string& name);  // ConfigError for unknown names

// Loads/synthesizes corpora and resolves names into a runnable setup.
ExperimentSetup make_setup(const RunConfig& c);
std::vector<ImageRecord> load_corpus(const CorpusConfig& c);

}  // namespace dasr

#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dasr/datasets.hpp"
#include "dasr/report.hpp"
#include "dasr/trainer.hpp"

namespace dasr {

// The single list of branch names; CLI help and config parsing read it.
enum class Branch {
    Direct4,
    MappingSame_OffShelf2x2,
    MappingSame_OffShelf4,
    MappingSame_Specialized4,
    Mapping2x_OffShelf2,
    Mapping2x_Specialized2,
    Restore_Direct,
    Restore_Mapped,
    Restore_MappedSpecialized,
};

std::span<const Branch> all_branches();
std::span<const Branch> sr_branches();
std::string_view branch_name(Branch b);
Branch parse_branch(std::string_view name);  // throws Error listing valid names
bool is_sr(Branch b);

// One evaluated condition. Restoration branches are parameterized by the
// degradation of their test input (`from`) and the intermediate domain
// (`to`); both name DegradationSpecs. SR branches ignore them.
struct BranchSpec {
    Branch branch = Branch::Direct4;
    std::string from;
    std::string to;
};

// Condition label: the SR branch name, or for restoration
// "7x7" (direct), "7Mapped9" (mapped) and "7Mapped9*" (mapped, then a
// specialized restorer), taking kernel sizes from the specs' blur steps.
std::string condition_label(const BranchSpec& spec, const std::map<std::string, DegradationSpec>& degradations);

/// A stage in a composed pipeline. Domains are free-form labels; adjacent
/// stages must agree on them.
struct Stage {
    std::string key;
    std::shared_ptr<const Model<float>> model;
    std::string in_domain;
    std::string out_domain;
};

class Pipeline {
public:
    // Throws ShapeError if adjacent domains disagree or the product of
    // stage scales is not `task_scale`.
    static Pipeline compose(std::vector<Stage> stages, int task_scale);

    // Runs every stage in inference mode; each intermediate is clipped to
    // [0, 1] like the final output.
    Tensor<float> run(const Tensor<float>& input) const;
    const std::vector<Stage>& stages() const noexcept { return stages_; }
    int scale() const noexcept { return scale_; }

private:
    std::vector<Stage> stages_;
    int scale_ = 1;
};

// Declared shape of a branch before any model exists: model keys, their
// scales and the domains they connect, in execution order.
struct StagePlan {
    std::string key;
    int scale;
    std::string in_domain;
    std::string out_domain;
};
std::vector<StagePlan> plan_branch(const BranchSpec& spec);
int task_scale(Branch b);

// Checks a plan's domain chain and net scale without training anything.
void validate_plan(const std::vector<StagePlan>& plan, int task_scale);

struct Trained {
    Model<float> model;
    TrainResult result;
};

/// Trained models by key. With a directory, each model is persisted as
/// `<key>.ckpt` plus a manifest line holding its fingerprint, and a later
/// request with the same fingerprint loads instead of training.
class ModelRegistry {
public:
    struct Entry {
        std::string key;
        std::string fingerprint;
        std::string digest;
        int iterations = 0;
        float final_loss = 0.0f;
        bool loaded = false;
    };

    explicit ModelRegistry(std::optional<std::filesystem::path> dir = std::nullopt);

    // A key requested twice must carry the same fingerprint.
    std::shared_ptr<const Model<float>> get_or_train(const std::string& key, const std::string& fingerprint,
                                                     const std::function<Trained()>& train_fn);
    std::shared_ptr<const Model<float>> find(const std::string& key) const;
    const std::vector<Entry>& entries() const noexcept { return entries_; }
    std::string manifest_text() const;

private:
    std::optional<std::filesystem::path> dir_;
    std::map<std::string, std::shared_ptr<const Model<float>>> models_;
    std::map<std::string, std::string> fingerprints_;
    std::map<std::string, std::string> stored_;  // key -> fingerprint from the on-disk manifest
    std::vector<Entry> entries_;
};

// Training entry points; `model.scale` is overridden by the task.
Trained train_offshelf(int scale, const std::vector<ImageRecord>& gt, const ModelConfig& model,
                       const TrainConfig& train, const TrainOptions& options = {});
Trained train_mapping(const DegradationSpec& from, const DegradationSpec& to, const std::vector<ImageRecord>& gt,
                      const ModelConfig& model, const TrainConfig& train, const TrainOptions& options = {});
// Stage 1 is only read; its outputs on apply(from, gt) are recomputed
// and clipped to [0, 1], then paired with `gt`. Throws if stage 1's
// parameters change.
Trained train_specialized(const Model<float>& stage1, const std::vector<ImageRecord>& gt,
                          const DegradationSpec& from, const ModelConfig& model, const TrainConfig& train,
                          const TrainOptions& options = {});
PairedDataset specialized_pairs(const Model<float>& stage1, const std::vector<ImageRecord>& gt,
                                const DegradationSpec& from);

/// Everything an experiment needs, fully resolved.
struct ExperimentSetup {
    std::vector<ImageRecord> train_gt;
    std::vector<ImageRecord> test_gt;
    // Optional second corpus with its own hidden degradation, used only for
    // testing SR branches trained on the first.
    std::vector<ImageRecord> cross_test_gt;
    std::string cross_unknown;

    std::map<std::string, DegradationSpec> degradations;
    std::string unknown = "unknown";  // SR input degradation name
    ModelConfig model;
    TrainConfig train;
    std::map<std::string, TrainConfig> train_overrides;  // by model key
    std::uint64_t seed = 1;
    std::vector<BranchSpec> branches;
    bool bicubic_baseline = true;
    std::optional<std::filesystem::path> registry_dir;
    std::function<void(const std::string&)> log;
};

struct ExperimentResult {
    std::vector<MetricsReport> reports;
    std::vector<std::string> failures;  // "<condition>: <reason>"
    std::vector<ModelRegistry::Entry> models;
};

ExperimentResult run_experiment(const ExperimentSetup& setup);

}  // namespace dasr

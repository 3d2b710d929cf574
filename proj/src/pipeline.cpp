#include "dasr/pipeline.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <sstream>

#include "dasr/checkpoint.hpp"
#include "dasr/config.hpp"
#include "dasr/rng.hpp"

namespace dasr {

namespace {

struct BranchName {
    Branch branch;
    std::string_view name;
};

constexpr std::array<BranchName, 9> kBranchNames{{
    {Branch::Direct4, "Direct4"},
    {Branch::MappingSame_OffShelf2x2, "MappingSame_OffShelf2x2"},
    {Branch::MappingSame_OffShelf4, "MappingSame_OffShelf4"},
    {Branch::MappingSame_Specialized4, "MappingSame_Specialized4"},
    {Branch::Mapping2x_OffShelf2, "Mapping2x_OffShelf2"},
    {Branch::Mapping2x_Specialized2, "Mapping2x_Specialized2"},
    {Branch::Restore_Direct, "Restore_Direct"},
    {Branch::Restore_Mapped, "Restore_Mapped"},
    {Branch::Restore_MappedSpecialized, "Restore_MappedSpecialized"},
}};

constexpr std::array<Branch, 9> kAll{Branch::Direct4,
                                     Branch::MappingSame_OffShelf2x2,
                                     Branch::MappingSame_OffShelf4,
                                     Branch::MappingSame_Specialized4,
                                     Branch::Mapping2x_OffShelf2,
                                     Branch::Mapping2x_Specialized2,
                                     Branch::Restore_Direct,
                                     Branch::Restore_Mapped,
                                     Branch::Restore_MappedSpecialized};

constexpr const char* kGt = "GT";
constexpr const char* kUnknown = "unknown";

DegradationSpec bicubic_down(int s) { return DegradationSpec({BicubicDown{s}}); }

// How to produce the model behind a stage key.
struct Recipe {
    enum class Kind { offshelf, direct, mapping, specialized } kind;
    int scale = 1;
    std::string from;  // degradation name, or "" for the SR unknown
    std::string to;    // mapping target name; "@bicubic_downN" for built-ins
    std::string stage1;
};

struct PlannedStage {
    StagePlan plan;
    Recipe recipe;
};

std::vector<PlannedStage> plan_with_recipes(const BranchSpec& spec) {
    using K = Recipe::Kind;
    const std::string b4 = bicubic_down(4).label(), b2 = bicubic_down(2).label();
    const PlannedStage map_same{{"map_same", 1, kUnknown, b4}, {K::mapping, 1, "", "@" + b4, ""}};
    const PlannedStage map_x2{{"map_x2", 2, kUnknown, b2}, {K::mapping, 2, "", "@" + b2, ""}};
    const Recipe offshelf2{K::offshelf, 2, "", "", ""};
    auto restore_stages = [&](bool mapped, bool specialized) {
        if (spec.from.empty() || spec.to.empty()) {
            throw Error(std::string(branch_name(spec.branch)) + ": restoration branches need 'from' and 'to' degradations");
        }
        const std::string map_key = "map_" + spec.from + "_to_" + spec.to;
        std::vector<PlannedStage> out;
        if (mapped) out.push_back({{map_key, 1, spec.from, spec.to}, {K::mapping, 1, spec.from, spec.to, ""}});
        if (specialized) {
            out.push_back({{"restorer_" + spec.to + "_via_" + spec.from, 1, spec.to, kGt},
                           {K::specialized, 1, spec.from, "", map_key}});
        } else {
            out.push_back({{"restorer_" + spec.to, 1, spec.to, kGt}, {K::direct, 1, spec.to, "", ""}});
        }
        return out;
    };
    switch (spec.branch) {
        case Branch::Direct4:
            return {{{"direct_x4", 4, kUnknown, kGt}, {K::direct, 4, "", "", ""}}};
        case Branch::MappingSame_OffShelf2x2:
            return {map_same, {{"offshelf_x2", 2, b4, b2}, offshelf2}, {{"offshelf_x2", 2, b2, kGt}, offshelf2}};
        case Branch::MappingSame_OffShelf4:
            return {map_same, {{"offshelf_x4", 4, b4, kGt}, {K::offshelf, 4, "", "", ""}}};
        case Branch::MappingSame_Specialized4:
            return {map_same, {{"specialized_x4", 4, b4, kGt}, {K::specialized, 4, "", "", "map_same"}}};
        case Branch::Mapping2x_OffShelf2:
            return {map_x2, {{"offshelf_x2", 2, b2, kGt}, offshelf2}};
        case Branch::Mapping2x_Specialized2:
            return {map_x2, {{"specialized_x2", 2, b2, kGt}, {K::specialized, 2, "", "", "map_x2"}}};
        case Branch::Restore_Direct:
            return restore_stages(false, false);
        case Branch::Restore_Mapped:
            return restore_stages(true, false);
        case Branch::Restore_MappedSpecialized:
            return restore_stages(true, true);
    }
    throw Error("unhandled branch");
}

void check_chain(const std::vector<std::string>& ins, const std::vector<std::string>& outs, const std::vector<int>& scales,
                 int task_scale, const std::string& what) {
    if (scales.empty()) throw ShapeError(what + ": no stages");
    long net = 1;
    for (std::size_t i = 0; i < scales.size(); ++i) {
        if (scales[i] < 1) throw ShapeError(what + ": stage " + std::to_string(i) + " has scale " + std::to_string(scales[i]));
        net *= scales[i];
        if (i + 1 < scales.size() && outs[i] != ins[i + 1]) {
            throw ShapeError(what + ": stage " + std::to_string(i) + " emits '" + outs[i] + "' but stage " +
                             std::to_string(i + 1) + " expects '" + ins[i + 1] + "'");
        }
    }
    if (net != task_scale) {
        throw ShapeError(what + ": stages scale by " + std::to_string(net) + ", task needs " + std::to_string(task_scale));
    }
}

int blur_size_of(const DegradationSpec& spec) {
    for (const auto& step : spec.steps())
        if (const auto* b = std::get_if<Blur>(&step)) return b->size;
    return 0;
}

std::string manifest_line(const ModelRegistry::Entry& e) {
    return e.key + "\t" + e.fingerprint + "\t" + e.digest + "\t" + std::to_string(e.iterations) + "\n";
}

}  // namespace

std::span<const Branch> all_branches() { return kAll; }
std::span<const Branch> sr_branches() { return std::span<const Branch>(kAll).first(6); }

std::string_view branch_name(Branch b) {
    for (const auto& e : kBranchNames)
        if (e.branch == b) return e.name;
    throw Error("unknown branch value");
}

Branch parse_branch(std::string_view name) {
    for (const auto& e : kBranchNames)
        if (e.name == name) return e.branch;
    std::string valid;
    for (const auto& e : kBranchNames) valid += (valid.empty() ? "" : ", ") + std::string(e.name);
    throw Error("unknown branch '" + std::string(name) + "'; valid: " + valid);
}

bool is_sr(Branch b) { return task_scale(b) == 4; }

int task_scale(Branch b) {
    switch (b) {
        case Branch::Restore_Direct:
        case Branch::Restore_Mapped:
        case Branch::Restore_MappedSpecialized:
            return 1;
        default:
            return 4;
    }
}

std::string condition_label(const BranchSpec& spec, const std::map<std::string, DegradationSpec>& degradations) {
    if (is_sr(spec.branch)) return std::string(branch_name(spec.branch));
    auto size_of = [&](const std::string& name) {
        const auto it = degradations.find(name);
        const int size = it == degradations.end() ? 0 : blur_size_of(it->second);
        return size > 0 ? std::to_string(size) : name;
    };
    const std::string from = size_of(spec.from);
    switch (spec.branch) {
        case Branch::Restore_Direct:
            return from + "x" + from;
        case Branch::Restore_Mapped:
            return from + "Mapped" + size_of(spec.to);
        default:
            return from + "Mapped" + size_of(spec.to) + "*";
    }
}

Pipeline Pipeline::compose(std::vector<Stage> stages, int task_scale) {
    std::vector<std::string> ins, outs;
    std::vector<int> scales;
    for (const auto& s : stages) {
        if (!s.model) throw Error("compose: stage '" + s.key + "' has no model");
        ins.push_back(s.in_domain);
        outs.push_back(s.out_domain);
        scales.push_back(s.model->config().scale);
    }
    check_chain(ins, outs, scales, task_scale, "compose");
    Pipeline p;
    p.stages_ = std::move(stages);
    p.scale_ = task_scale;
    return p;
}

Tensor<float> Pipeline::run(const Tensor<float>& input) const {
    Tensor<float> x = input;
    for (const auto& s : stages_) x = s.model->infer(x);
    return x;
}

std::vector<StagePlan> plan_branch(const BranchSpec& spec) {
    std::vector<StagePlan> out;
    for (auto& p : plan_with_recipes(spec)) out.push_back(std::move(p.plan));
    return out;
}

void validate_plan(const std::vector<StagePlan>& plan, int task_scale) {
    std::vector<std::string> ins, outs;
    std::vector<int> scales;
    for (const auto& s : plan) {
        ins.push_back(s.in_domain);
        outs.push_back(s.out_domain);
        scales.push_back(s.scale);
    }
    check_chain(ins, outs, scales, task_scale, "plan");
}

ModelRegistry::ModelRegistry(std::optional<std::filesystem::path> dir) : dir_(std::move(dir)) {
    if (!dir_) return;
    std::filesystem::create_directories(*dir_);
    std::ifstream in(*dir_ / "manifest.tsv");
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream fields(line);
        std::string key, fingerprint;
        if (std::getline(fields, key, '\t') && std::getline(fields, fingerprint, '\t')) stored_[key] = fingerprint;
    }
}

std::shared_ptr<const Model<float>> ModelRegistry::get_or_train(const std::string& key, const std::string& fingerprint,
                                                                const std::function<Trained()>& train_fn) {
    if (const auto it = models_.find(key); it != models_.end()) {
        if (fingerprints_.at(key) != fingerprint) {
            throw Error("registry: model '" + key + "' requested with two different configurations");
        }
        return it->second;
    }
    Entry entry{key, fingerprint, "", 0, 0.0f, false};
    std::shared_ptr<const Model<float>> model;
    const auto path = dir_ ? *dir_ / (key + ".ckpt") : std::filesystem::path();
    const auto stored = stored_.find(key);
    if (dir_ && stored != stored_.end() && stored->second == fingerprint && std::filesystem::exists(path)) {
        const Checkpoint ckpt = load_checkpoint(path);
        model = std::make_shared<const Model<float>>(ckpt.model());
        entry.iterations = ckpt.iteration;
        entry.final_loss = ckpt.loss_history.empty() ? 0.0f : ckpt.loss_history.back();
        entry.loaded = true;
    } else {
        Trained t = train_fn();
        entry.iterations = t.result.checkpoint.iteration;
        entry.final_loss = t.result.loss_history.empty() ? 0.0f : t.result.loss_history.back();
        if (dir_) save_checkpoint(t.result.checkpoint, path);
        model = std::make_shared<const Model<float>>(std::move(t.model));
    }
    entry.digest = parameter_digest(model->parameters());
    models_[key] = model;
    fingerprints_[key] = fingerprint;
    entries_.push_back(entry);
    if (dir_) {
        stored_[key] = fingerprint;
        write_file_atomic(*dir_ / "manifest.tsv", manifest_text());
    }
    return model;
}

std::shared_ptr<const Model<float>> ModelRegistry::find(const std::string& key) const {
    const auto it = models_.find(key);
    return it == models_.end() ? nullptr : it->second;
}

std::string ModelRegistry::manifest_text() const {
    std::string out;
    for (const auto& e : entries_) out += manifest_line(e);
    // Keep records of models not touched this run.
    for (const auto& [key, fp] : stored_)
        if (!models_.count(key)) out += key + "\t" + fp + "\t\t\n";
    return out;
}

Trained train_offshelf(int scale, const std::vector<ImageRecord>& gt, const ModelConfig& model,
                       const TrainConfig& train_cfg, const TrainOptions& options) {
    if (scale != 2 && scale != 4) throw Error("train_offshelf: scale must be 2 or 4");
    ModelConfig mc = model;
    mc.scale = scale;
    Trained t{build_model(mc), {}};
    t.result = train(t.model, make_pairs(gt, bicubic_down(scale), scale), train_cfg, options);
    return t;
}

Trained train_mapping(const DegradationSpec& from, const DegradationSpec& to, const std::vector<ImageRecord>& gt,
                      const ModelConfig& model, const TrainConfig& train_cfg, const TrainOptions& options) {
    PairedDataset data = make_mapping_pairs(gt, from, to);
    ModelConfig mc = model;
    mc.scale = data.scale;
    Trained t{build_model(mc), {}};
    t.result = train(t.model, data, train_cfg, options);
    return t;
}

PairedDataset specialized_pairs(const Model<float>& stage1, const std::vector<ImageRecord>& gt,
                                const DegradationSpec& from) {
    const ScaleRatio r = from.net_scale();
    if (r.num != 1) throw Error("specialized_pairs: '" + from.label() + "' must not enlarge images");
    const int s1 = stage1.config().scale;
    if (r.den % s1 != 0) {
        throw ShapeError("specialized_pairs: stage 1 scale " + std::to_string(s1) + " overshoots '" + from.label() + "'");
    }
    PairedDataset d = make_pairs(gt, from, r.den);
    d.scale = r.den / s1;
    d.input_domain = "stage1(" + d.input_domain + ")";
    for (auto& p : d.pairs) {
        p.input.pixels = stage1.infer(p.input.pixels);  // clipped: stands for an image
        p.input.provenance += " | stage1";
    }
    d.validate();
    return d;
}

Trained train_specialized(const Model<float>& stage1, const std::vector<ImageRecord>& gt,
                          const DegradationSpec& from, const ModelConfig& model, const TrainConfig& train_cfg,
                          const TrainOptions& options) {
    const std::string before = parameter_digest(stage1.parameters());
    PairedDataset data = specialized_pairs(stage1, gt, from);
    ModelConfig mc = model;
    mc.scale = data.scale;
    Trained t{build_model(mc), {}};
    t.result = train(t.model, data, train_cfg, options);
    if (parameter_digest(stage1.parameters()) != before) {
        throw Error("train_specialized: stage-1 parameters changed during training");
    }
    return t;
}

ExperimentResult run_experiment(const ExperimentSetup& setup) {
    auto log = [&](const std::string& msg) {
        if (setup.log) setup.log(msg);
    };
    auto spec_named = [&](const std::string& name) -> const DegradationSpec& {
        const auto it = setup.degradations.find(name);
        if (it == setup.degradations.end()) throw ConfigError("unknown degradation '" + name + "'");
        return it->second;
    };
    // "" is the SR unknown; "@label" is a built-in bicubic target.
    auto resolve = [&](const std::string& name) -> DegradationSpec {
        if (name.empty()) return spec_named(setup.unknown);
        if (name == "@" + bicubic_down(4).label()) return bicubic_down(4);
        if (name == "@" + bicubic_down(2).label()) return bicubic_down(2);
        return spec_named(name);
    };
    if (setup.train_gt.empty() || setup.test_gt.empty()) throw Error("run_experiment: empty train or test corpus");
    for (const auto& b : setup.branches) validate_plan(plan_branch(b), task_scale(b.branch));

    ModelRegistry registry(setup.registry_dir);
    const std::string corpus_digest = image_digest(setup.train_gt);
    std::map<std::string, std::string> failed;  // key -> reason, so a failed model is not retrained

    auto obtain = [&](const PlannedStage& ps) -> std::shared_ptr<const Model<float>> {
        const std::string& key = ps.plan.key;
        if (const auto f = failed.find(key); f != failed.end()) throw Error(f->second);
        const Recipe& r = ps.recipe;
        ModelConfig mc = setup.model;
        mc.seed = mix_seed(setup.seed, name_hash(key));
        mc.scale = r.scale;
        const auto ov = setup.train_overrides.find(key);
        TrainConfig tc = ov == setup.train_overrides.end() ? setup.train : ov->second;
        tc.seed = mix_seed(mc.seed, 1);

        // Plans list stage 1 before the stage it feeds, so it is already registered.
        std::shared_ptr<const Model<float>> stage1;
        if (r.kind == Recipe::Kind::specialized) {
            stage1 = registry.find(r.stage1);
            if (!stage1) throw Error(key + ": stage 1 '" + r.stage1 + "' is not available");
        }
        nlohmann::json fp{{"key", key},
                          {"model", to_json(mc)},
                          {"train", to_json(tc)},
                          {"corpus", corpus_digest},
                          {"kind", static_cast<int>(r.kind)}};
        if (r.kind != Recipe::Kind::offshelf) fp["from"] = to_json(resolve(r.from));
        if (r.kind == Recipe::Kind::mapping) fp["to"] = to_json(resolve(r.to));
        if (stage1) fp["stage1"] = parameter_digest(stage1->parameters());
        const std::string fingerprint = content_digest(fp.dump());

        TrainOptions opts;
        if (setup.log && tc.log_every > 0) {
            opts.on_log = [&, key](int iter, float loss) {
                log("  " + key + " iter " + std::to_string(iter) + " loss " + format_db(loss, 5));
            };
        }
        try {
            return registry.get_or_train(key, fingerprint, [&]() -> Trained {
                log("training " + key);
                switch (r.kind) {
                    case Recipe::Kind::offshelf:
                        return train_offshelf(r.scale, setup.train_gt, mc, tc, opts);
                    case Recipe::Kind::mapping:
                        return train_mapping(resolve(r.from), resolve(r.to), setup.train_gt, mc, tc, opts);
                    case Recipe::Kind::specialized:
                        return train_specialized(*stage1, setup.train_gt, resolve(r.from), mc, tc, opts);
                    case Recipe::Kind::direct: {
                        Trained t{build_model(mc), {}};
                        t.result = train(t.model, make_pairs(setup.train_gt, resolve(r.from), r.scale), tc, opts);
                        return t;
                    }
                }
                throw Error("unhandled recipe");
            });
        } catch (const std::exception& e) {
            failed[key] = key + ": " + e.what();
            throw;
        }
    };

    ExperimentResult result;
    const bool any_sr = std::any_of(setup.branches.begin(), setup.branches.end(), [](const BranchSpec& b) { return is_sr(b.branch); });
    std::vector<std::pair<std::string, PairedDataset>> sr_tests;
    if (any_sr) {
        sr_tests.emplace_back("held-out", make_pairs(setup.test_gt, spec_named(setup.unknown), 4));
        if (!setup.cross_test_gt.empty()) {
            sr_tests.emplace_back("cross:" + setup.cross_unknown,
                                  make_pairs(setup.cross_test_gt, spec_named(setup.cross_unknown), 4));
        }
        if (setup.bicubic_baseline) {
            for (const auto& [name, test] : sr_tests) {
                result.reports.push_back(evaluate(
                    "Bicubic4", name, [](const Tensor<float>& x) { return resample_bicubic(x, 4.0); }, test));
            }
        }
    }

    for (const auto& b : setup.branches) {
        const std::string label = condition_label(b, setup.degradations);
        try {
            std::vector<Stage> stages;
            for (const auto& ps : plan_with_recipes(b)) {
                stages.push_back({ps.plan.key, obtain(ps), ps.plan.in_domain, ps.plan.out_domain});
            }
            const Pipeline pipe = Pipeline::compose(stages, task_scale(b.branch));
            std::map<std::string, std::string> digests;
            for (const auto& s : pipe.stages()) digests[s.key] = parameter_digest(s.model->parameters());
            auto run = [&pipe](const Tensor<float>& x) { return pipe.run(x); };
            if (is_sr(b.branch)) {
                for (const auto& [name, test] : sr_tests) {
                    result.reports.push_back(evaluate(label, name, run, test));
                    result.reports.back().digests = digests;
                }
            } else {
                result.reports.push_back(evaluate(label, "held-out", run, make_pairs(setup.test_gt, spec_named(b.from), 1)));
                result.reports.back().digests = digests;
            }
            log("evaluated " + label);
        } catch (const std::exception& e) {
            result.failures.push_back(label + ": " + e.what());
            log("FAILED " + label + ": " + e.what());
        }
    }
    result.models = registry.entries();
    return result;
}

}  // namespace dasr

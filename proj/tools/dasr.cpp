// dasr: degrade, train, map, super-resolve, restore, evaluate and run whole
// experiments from a declarative config.
//
// Exit codes: 0 success, 1 other error, 2 config or usage error, 3 numeric
// failure during training, 4 experiment finished with failed branches.
// Every failure prints one JSON object on stderr.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dasr/checkpoint.hpp"
#include "dasr/image_io.hpp"
#include "dasr/rng.hpp"
#include "dasr/run_config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dasr;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kNumeric = 3, kPartial = 4 };

struct Globals {
    std::string config;
    std::string preset;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool quiet = false;
};

void log(const Globals& g, const std::string& msg) {
    if (!g.quiet) std::cerr << msg << '\n';
}

void error_line(const char* kind, const std::string& message) {
    std::cerr << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << '\n';
}

RunConfig resolve_config(const Globals& g) {
    if (!g.config.empty() && !g.preset.empty()) throw ConfigError("give either --config or --preset, not both");
    RunConfig c;
    if (!g.config.empty()) c = load_run_config(g.config);
    else if (!g.preset.empty()) c = preset(g.preset);
    else throw ConfigError("no configuration: pass --config FILE or --preset NAME");
    if (g.seed) c.experiment.seed = *g.seed;
    return c;
}

fs::path out_dir(const Globals& g) {
    if (g.out.empty()) throw ConfigError("--out is required for this command");
    fs::create_directories(g.out);
    return g.out;
}

const DegradationSpec& spec_named(const RunConfig& c, const std::string& name) {
    if (const auto it = c.degradations.find(name); it != c.degradations.end()) return it->second;
    std::string known;
    for (const auto& [k, v] : c.degradations) known += (known.empty() ? "" : ", ") + k;
    throw ConfigError("unknown degradation '" + name + "' (available: " + (known.empty() ? "none" : known) + ")");
}

std::vector<ImageRecord> input_images(const RunConfig* c, const std::string& dir) {
    if (!dir.empty()) return load_dir(dir, "*.png", 1).records;
    if (!c) throw ConfigError("--in is required without a config");
    return load_corpus(c->corpus);
}

void write_images(const fs::path& dir, const std::vector<ImageRecord>& images, int bit_depth) {
    std::string manifest;
    for (const auto& r : images) {
        write_png(dir / (r.id + ".png"), r.pixels, bit_depth);
        manifest += r.id + "\t" + std::to_string(r.pixels.shape().h) + "x" + std::to_string(r.pixels.shape().w) + "\t" +
                    r.provenance + "\n";
    }
    write_file_atomic(dir / "manifest.tsv", manifest);
}

// Seeds and overrides are derived from the model key exactly as the
// experiment runner derives them, so a model trained here matches the one
// an experiment would train.
struct KeyedConfigs {
    ModelConfig model;
    TrainConfig train;
};

KeyedConfigs configs_for(const RunConfig& c, const std::string& model_name, const std::string& key,
                         std::optional<int> iters) {
    const auto m = c.models.find(model_name);
    if (m == c.models.end()) throw ConfigError("unknown model '" + model_name + "'");
    KeyedConfigs k{m->second, c.training};
    if (const auto ov = c.training_overrides.find(key); ov != c.training_overrides.end()) k.train = ov->second;
    k.model.seed = mix_seed(c.experiment.seed, name_hash(key));
    k.train.seed = mix_seed(k.model.seed, 1);
    if (iters) {
        k.train.total_iters = *iters;
        if (*iters > 0) k.train.halve_every = std::min(k.train.halve_every, *iters);
        try {
            k.train.validate();
        } catch (const Error& e) {
            throw ConfigError(e.what());
        }
    }
    return k;
}

struct TrainFlags {
    std::string model;
    std::optional<int> iters;
    std::string resume;
};

void save_trained(const Globals& g, const std::string& key, const TrainResult& r) {
    const fs::path path = out_dir(g) / (key + ".ckpt");
    save_checkpoint(r.checkpoint, path);
    json summary{{"key", key},
                 {"checkpoint", path.string()},
                 {"digest", parameter_digest(r.checkpoint.parameters)},
                 {"iterations", r.checkpoint.iteration}};
    if (!r.loss_history.empty()) summary["final_loss"] = r.loss_history.back();
    std::cout << summary.dump() << '\n';
}

// Trains `model` on `data`, optionally resuming from a checkpoint of the
// same configuration.
TrainResult run_training(const Globals& g, const std::string& key, Model<float> model, const PairedDataset& data,
                         const TrainConfig& tc, const std::string& resume_path) {
    TrainOptions opts;
    std::optional<Checkpoint> resume;
    if (!resume_path.empty()) {
        resume = load_checkpoint(resume_path);
        opts.resume = &*resume;
    }
    if (tc.log_every > 0) {
        opts.on_log = [&](int iter, float loss) {
            log(g, key + " iter " + std::to_string(iter) + " loss " + format_db(loss, 5));
        };
    }
    log(g, "training " + key + " on " + std::to_string(data.size()) + " pairs");
    return train(model, data, tc, opts);
}

std::vector<ImageRecord> training_images(const RunConfig& c) {
    const auto all = load_corpus(c.corpus);
    if (c.corpus.n_train <= 0) return all;
    return split(all, static_cast<std::size_t>(c.corpus.n_train)).train;
}

Pipeline compose_checkpoints(const std::vector<std::string>& paths, std::optional<int> expected_scale) {
    std::vector<Stage> stages;
    int product = 1;
    for (std::size_t i = 0; i < paths.size(); ++i) {
        auto model = std::make_shared<const Model<float>>(load_checkpoint(paths[i]).model());
        product *= model->config().scale;
        stages.push_back({fs::path(paths[i]).stem().string(), std::move(model), "s" + std::to_string(i),
                          "s" + std::to_string(i + 1)});
    }
    return Pipeline::compose(std::move(stages), expected_scale.value_or(product));
}

int apply_pipeline(const Globals& g, const Pipeline& p, const std::string& in_dir, int bit_depth) {
    std::vector<ImageRecord> out;
    for (auto& r : load_dir(in_dir, "*.png", 1).records) {
        std::string provenance = r.provenance;
        for (const auto& s : p.stages()) provenance += " | " + s.key;
        out.push_back({r.id, p.run(r.pixels), provenance});
    }
    write_images(out_dir(g), out, bit_depth);
    log(g, "wrote " + std::to_string(out.size()) + " images to " + g.out);
    return kOk;
}

std::string branch_footer() {
    std::string s = "Branches:";
    for (Branch b : all_branches()) s += "\n  " + std::string(branch_name(b));
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Degradation-adaptive super-resolution and restoration toolkit", "dasr"};
    app.require_subcommand(1);
    app.fallthrough();
    app.footer(branch_footer());

    Globals g;
    app.add_option("--config", g.config, "JSON run configuration");
    app.add_option("--preset", g.preset, "built-in configuration (see show-preset)");
    app.add_option("--seed", g.seed, "experiment seed; model and training seeds derive from it");
    app.add_option("--out", g.out, "output directory");
    app.add_flag("-q,--quiet", g.quiet, "no progress output on stderr");

    int bit_depth = 8;
    std::string in_dir;
    auto add_io = [&](CLI::App* cmd) {
        cmd->add_option("--in", in_dir, "input PNG directory");
        cmd->add_option("--bit-depth", bit_depth, "PNG bit depth")->check(CLI::IsMember({8, 16}));
    };

    auto* degrade = app.add_subcommand("degrade", "apply a named degradation to every image");
    std::string spec_name;
    degrade->add_option("--spec", spec_name, "degradation name from the config")->required();
    add_io(degrade);

    TrainFlags tf;
    auto add_train = [&](CLI::App* cmd) {
        cmd->add_option("--model", tf.model, "model name from the config (default: experiment.model)");
        cmd->add_option("--iters", tf.iters, "override total_iters; 0 writes the initial checkpoint");
        cmd->add_option("--resume", tf.resume, "continue from this checkpoint");
    };

    auto* train_cmd = app.add_subcommand("train", "train an SR or restoration model");
    std::string task = "offshelf", degradation, stage1_path, from, to;
    int scale = 2;
    train_cmd->add_option("--task", task, "offshelf | restorer | specialized")
        ->check(CLI::IsMember({"offshelf", "restorer", "specialized"}));
    train_cmd->add_option("--scale", scale, "offshelf scale")->check(CLI::IsMember({2, 4}));
    train_cmd->add_option("--degradation", degradation, "restorer input degradation");
    train_cmd->add_option("--stage1", stage1_path, "specialized: frozen stage-1 checkpoint");
    train_cmd->add_option("--from", from, "specialized: degradation fed to stage 1");
    add_train(train_cmd);

    auto* map_cmd = app.add_subcommand("map", "train a domain-mapping model");
    map_cmd->add_option("--from", from, "source degradation")->required();
    map_cmd->add_option("--to", to, "target degradation")->required();
    add_train(map_cmd);

    std::vector<std::string> checkpoints;
    std::optional<int> sr_scale;
    auto* sr_cmd = app.add_subcommand("sr", "super-resolve images through one or more checkpoints");
    sr_cmd->add_option("--checkpoint", checkpoints, "stage checkpoint, repeat to compose in order")->required();
    sr_cmd->add_option("--scale", sr_scale, "expected net scale");
    add_io(sr_cmd);
    auto* restore_cmd = app.add_subcommand("restore", "restore images through scale-1 checkpoints");
    restore_cmd->add_option("--checkpoint", checkpoints, "stage checkpoint, repeat to compose in order")->required();
    add_io(restore_cmd);

    auto* eval_cmd = app.add_subcommand("eval", "score predictions against ground truth by image name");
    std::string pred_dir, gt_dir, condition = "eval", test_set = "eval";
    eval_cmd->add_option("--pred", pred_dir, "prediction directory")->required();
    eval_cmd->add_option("--gt", gt_dir, "ground-truth directory")->required();
    eval_cmd->add_option("--condition", condition, "condition label in the report");
    eval_cmd->add_option("--test-set", test_set, "test-set label in the report");

    auto* exp_cmd = app.add_subcommand("experiment", "train and evaluate every configured branch");
    auto* branches_cmd = app.add_subcommand("branches", "list branch names and their stage plans");
    auto* show_cmd = app.add_subcommand("show-preset", "print a built-in configuration, or list them");
    std::string show_name;
    show_cmd->add_option("name", show_name, "preset name");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        error_line("usage", e.what());
        return kConfig;
    }

    try {
        if (*degrade) {
            const RunConfig c = resolve_config(g);
            const DegradationSpec& spec = spec_named(c, spec_name);
            std::vector<ImageRecord> out;
            for (auto& r : input_images(&c, in_dir)) {
                out.push_back({r.id, apply(spec, r.pixels, noise_stream(r.id)), r.provenance + " | " + spec.label()});
            }
            write_images(out_dir(g), out, bit_depth);
            log(g, "wrote " + std::to_string(out.size()) + " images to " + g.out);
            return kOk;
        }
        if (*train_cmd || *map_cmd) {
            const RunConfig c = resolve_config(g);
            const std::string model_name = tf.model.empty() ? c.experiment.model : tf.model;
            const auto gt = training_images(c);
            if (*map_cmd) {
                const std::string key = "map_" + from + "_to_" + to;
                const KeyedConfigs k = configs_for(c, model_name, key, tf.iters);
                PairedDataset data = make_mapping_pairs(gt, spec_named(c, from), spec_named(c, to));
                ModelConfig mc = k.model;
                mc.scale = data.scale;
                save_trained(g, key, run_training(g, key, build_model(mc), data, k.train, tf.resume));
                return kOk;
            }
            if (task == "offshelf") {
                const std::string key = "offshelf_x" + std::to_string(scale);
                const KeyedConfigs k = configs_for(c, model_name, key, tf.iters);
                ModelConfig mc = k.model;
                mc.scale = scale;
                const PairedDataset data = make_pairs(gt, DegradationSpec({BicubicDown{scale}}), scale);
                save_trained(g, key, run_training(g, key, build_model(mc), data, k.train, tf.resume));
            } else if (task == "restorer") {
                if (degradation.empty()) throw ConfigError("train --task restorer needs --degradation");
                const DegradationSpec& spec = spec_named(c, degradation);
                const ScaleRatio r = spec.net_scale();
                if (r.num != 1) throw ConfigError("degradation '" + degradation + "' enlarges images");
                const std::string key = "restorer_" + degradation;
                const KeyedConfigs k = configs_for(c, model_name, key, tf.iters);
                ModelConfig mc = k.model;
                mc.scale = r.den;
                save_trained(g, key, run_training(g, key, build_model(mc), make_pairs(gt, spec, r.den), k.train, tf.resume));
            } else {
                if (stage1_path.empty() || from.empty()) throw ConfigError("train --task specialized needs --stage1 and --from");
                const Model<float> stage1 = load_checkpoint(stage1_path).model();
                const std::string before = parameter_digest(stage1.parameters());
                const std::string key = "specialized_" + fs::path(stage1_path).stem().string();
                const KeyedConfigs k = configs_for(c, model_name, key, tf.iters);
                const PairedDataset data = specialized_pairs(stage1, gt, spec_named(c, from));
                ModelConfig mc = k.model;
                mc.scale = data.scale;
                save_trained(g, key, run_training(g, key, build_model(mc), data, k.train, tf.resume));
                if (parameter_digest(stage1.parameters()) != before) throw Error("stage-1 parameters changed");
            }
            return kOk;
        }
        if (*sr_cmd) {
            if (in_dir.empty()) throw ConfigError("sr needs --in");
            return apply_pipeline(g, compose_checkpoints(checkpoints, sr_scale), in_dir, bit_depth);
        }
        if (*restore_cmd) {
            if (in_dir.empty()) throw ConfigError("restore needs --in");
            return apply_pipeline(g, compose_checkpoints(checkpoints, 1), in_dir, bit_depth);
        }
        if (*eval_cmd) {
            const auto preds = load_dir(pred_dir, "*.png", 1).records;
            std::map<std::string, const ImageRecord*> by_id;
            for (const auto& p : preds) by_id[p.id] = &p;
            PairedDataset data;
            for (auto& t : load_dir(gt_dir, "*.png", 1).records) {
                const auto it = by_id.find(t.id);
                if (it == by_id.end()) throw Error("eval: no prediction for '" + t.id + "'");
                data.pairs.push_back({*it->second, std::move(t)});
            }
            const std::vector<MetricsReport> reports{
                evaluate(condition, test_set, [](const Tensor<float>& x) { return x; }, data)};
            const std::string md = reports_markdown(reports, TableLayout::conditions_as_rows);
            if (!g.out.empty()) {
                const fs::path dir = out_dir(g);
                write_file_atomic(dir / "report.csv", reports_csv(reports));
                write_file_atomic(dir / "report.md", md);
            }
            std::cout << md;
            return kOk;
        }
        if (*exp_cmd) {
            const RunConfig c = resolve_config(g);
            const fs::path dir = g.out.empty() ? fs::path(c.experiment.output_dir) : fs::path(g.out);
            fs::create_directories(dir);
            ExperimentSetup setup = make_setup(c);
            setup.registry_dir = dir / "models";
            setup.log = [&](const std::string& m) { log(g, m); };
            const ExperimentResult r = run_experiment(setup);
            const std::string md = reports_markdown(r.reports, c.experiment.layout);
            write_file_atomic(dir / "config.json", to_json(c).dump(2) + "\n");
            write_file_atomic(dir / "report.csv", reports_csv(r.reports));
            write_file_atomic(dir / "report.md", md);
            std::cout << md;
            if (!r.failures.empty()) {
                for (const auto& f : r.failures) error_line("branch", f);
                return kPartial;
            }
            return kOk;
        }
        if (*branches_cmd) {
            for (Branch b : all_branches()) {
                std::string line(branch_name(b));
                line += is_sr(b) ? "\tsr\t" : "\trestore\t";
                const auto plan = plan_branch({b, "<from>", "<to>"});
                for (std::size_t i = 0; i < plan.size(); ++i) line += (i ? " -> " : "") + plan[i].key;
                std::cout << line << '\n';
            }
            return kOk;
        }
        if (*show_cmd) {
            if (show_name.empty()) {
                for (const auto& n : preset_names()) std::cout << n << '\n';
            } else {
                std::cout << to_json(preset(show_name)).dump(2) << '\n';
            }
            return kOk;
        }
    } catch (const ConfigError& e) {
        error_line("config", e.what());
        return kConfig;
    } catch (const ShapeError& e) {
        error_line("shape", e.what());
        return kFailure;
    } catch (const NumericError& e) {
        error_line("numeric", e.what());
        return kNumeric;
    } catch (const std::exception& e) {
        error_line("error", e.what());
        return kFailure;
    }
    return kOk;
}

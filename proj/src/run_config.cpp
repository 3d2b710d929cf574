#include "dasr/run_config.hpp"

#include <fstream>
#include <sstream>

#include "strict_object.hpp"

namespace dasr {

using nlohmann::json;
using detail::StrictObject;

namespace {

// Desk-scale stand-ins for the two published experiments. Written as
// documents so they double as config-file examples.
constexpr const char* kFig3Desk = R"({
  "corpus": {"synth": {"n": 160, "size": 64, "seed": 11}, "n_train": 128},
  "cross_corpus": {"synth": {"n": 32, "size": 64, "seed": 23}, "n_train": 0},
  "degradations": {
    "unknown":   [{"blur": {"size": 9, "sigma": 1.6}}, {"bicubic_down": 4}, {"noise": {"psnr_db": 45, "seed": 3}}],
    "unknown_b": [{"blur": {"size": 11, "sigma": 2.2}}, {"bicubic_down": 4}, {"noise": {"psnr_db": 42, "seed": 5}}]
  },
  "models": {"desk": {"n_groups": 2, "n_blocks": 2, "channels": 16, "reduction": 4}},
  "training": {
    "base": {"batch_size": 4, "patch_size": 16, "lr0": 0.001, "halve_every": 1500, "total_iters": 3000, "log_every": 500}
  },
  "experiment": {
    "branches": ["Direct4", "MappingSame_OffShelf2x2", "MappingSame_OffShelf4", "MappingSame_Specialized4",
                 "Mapping2x_OffShelf2", "Mapping2x_Specialized2"],
    "model": "desk", "unknown": "unknown", "cross_unknown": "unknown_b",
    "seed": 1, "output_dir": "fig3-desk", "layout": "rows"
  }
})";

// One shared noise seed: each image carries the same noise field in every
// blur domain, so mapping pairs differ only by blur.
constexpr const char* kTable3Desk = R"({
  "corpus": {"synth": {"n": 64, "size": 64, "seed": 11}, "n_train": 32},
  "degradations": {
    "blur7":  [{"blur": {"size": 7}},  {"noise": {"psnr_db": 40, "seed": 1}}],
    "blur9":  [{"blur": {"size": 9}},  {"noise": {"psnr_db": 40, "seed": 1}}],
    "blur11": [{"blur": {"size": 11}}, {"noise": {"psnr_db": 40, "seed": 1}}]
  },
  "models": {"desk": {"n_groups": 2, "n_blocks": 2, "channels": 16, "reduction": 4}},
  "training": {
    "base": {"batch_size": 4, "patch_size": 24, "lr0": 0.001, "halve_every": 1500, "total_iters": 3000, "log_every": 500}
  },
  "experiment": {
    "branches": [
      {"branch": "Restore_Mapped", "from": "blur7", "to": "blur9"},
      {"branch": "Restore_Direct", "from": "blur7", "to": "blur9"},
      {"branch": "Restore_MappedSpecialized", "from": "blur7", "to": "blur9"},
      {"branch": "Restore_Direct", "from": "blur9", "to": "blur9"},
      {"branch": "Restore_Mapped", "from": "blur11", "to": "blur9"},
      {"branch": "Restore_Direct", "from": "blur11", "to": "blur9"}
    ],
    "model": "desk", "seed": 1, "output_dir": "table3-desk", "layout": "columns", "bicubic_baseline": false
  }
})";

CorpusConfig corpus_from_json(const json& j, const std::string& where) {
    StrictObject o(j, where);
    CorpusConfig c;
    if (const json* s = o.sub("synth")) {
        StrictObject so(*s, where + ".synth");
        CorpusConfig::Synth synth;
        so.get("n", synth.n);
        so.get("size", synth.size);
        so.get("seed", synth.seed);
        so.finish();
        c.synth = synth;
    }
    o.get("dir", c.dir);
    o.get("pattern", c.pattern);
    o.get("n_train", c.n_train);
    o.finish();
    if (c.synth.has_value() == !c.dir.empty()) throw ConfigError(where + ": give exactly one of 'synth' or 'dir'");
    if (c.n_train < 0) throw ConfigError(where + ".n_train: must be >= 0");
    if (c.synth && c.n_train > c.synth->n) throw ConfigError(where + ".n_train: exceeds synth.n");
    return c;
}

json to_json(const CorpusConfig& c) {
    json j{{"n_train", c.n_train}};
    if (c.synth) {
        j["synth"] = {{"n", c.synth->n}, {"size", c.synth->size}, {"seed", c.synth->seed}};
    } else {
        j["dir"] = c.dir;
        j["pattern"] = c.pattern;
    }
    return j;
}

BranchSpec branch_from_json(const json& j, const std::string& where) {
    auto parse = [&](const std::string& name) {
        try {
            return parse_branch(name);
        } catch (const Error& e) {
            throw ConfigError(where + ": " + e.what());
        }
    };
    if (j.is_string()) {
        BranchSpec b{parse(j.get<std::string>()), "", ""};
        if (!is_sr(b.branch)) throw ConfigError(where + ": restoration branches need an object with 'from' and 'to'");
        return b;
    }
    StrictObject o(j, where);
    std::string name;
    BranchSpec b;
    o.get("branch", name);
    o.get("from", b.from);
    o.get("to", b.to);
    o.finish();
    b.branch = parse(name);
    if (!is_sr(b.branch) && (b.from.empty() || b.to.empty())) throw ConfigError(where + ": needs 'from' and 'to'");
    return b;
}

void require_name(const std::map<std::string, DegradationSpec>& m, const std::string& name, const std::string& where) {
    if (m.count(name)) return;
    std::string known;
    for (const auto& [k, v] : m) known += (known.empty() ? "" : ", ") + k;
    throw ConfigError(where + ": unknown degradation '" + name + "' (defined: " + (known.empty() ? "none" : known) + ")");
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
    StrictObject root(j, "config");
    RunConfig c;
    const json* corpus = root.sub("corpus");
    if (!corpus) throw ConfigError("config: missing 'corpus'");
    c.corpus = corpus_from_json(*corpus, "corpus");
    if (const json* cross = root.sub("cross_corpus")) c.cross_corpus = corpus_from_json(*cross, "cross_corpus");

    if (const json* d = root.sub("degradations")) {
        if (!d->is_object()) throw ConfigError("degradations: expected an object");
        for (auto it = d->begin(); it != d->end(); ++it) {
            c.degradations.emplace(it.key(), degradation_from_json(it.value(), "degradations." + it.key()));
        }
    }
    if (const json* m = root.sub("models")) {
        if (!m->is_object()) throw ConfigError("models: expected an object");
        for (auto it = m->begin(); it != m->end(); ++it) {
            c.models.emplace(it.key(), model_config_from_json(it.value(), "models." + it.key()));
        }
    }
    if (const json* t = root.sub("training")) {
        StrictObject to(*t, "training");
        if (const json* base = to.sub("base")) c.training = train_config_from_json(*base, "training.base");
        if (const json* ov = to.sub("overrides")) {
            if (!ov->is_object()) throw ConfigError("training.overrides: expected an object");
            for (auto it = ov->begin(); it != ov->end(); ++it) {
                c.training_overrides.emplace(
                    it.key(), train_config_from_json(it.value(), "training.overrides." + it.key(), c.training));
            }
        }
        to.finish();
    }

    const json* e = root.sub("experiment");
    root.finish();
    if (e) {
        StrictObject eo(*e, "experiment");
        ExperimentConfig& x = c.experiment;
        if (const json* branches = eo.sub("branches")) {
            if (!branches->is_array()) throw ConfigError("experiment.branches: expected an array");
            for (std::size_t i = 0; i < branches->size(); ++i) {
                x.branches.push_back(branch_from_json((*branches)[i], "experiment.branches[" + std::to_string(i) + "]"));
            }
        }
        eo.get("model", x.model);
        eo.get("unknown", x.unknown);
        eo.get("cross_unknown", x.cross_unknown);
        eo.get("seed", x.seed);
        eo.get("output_dir", x.output_dir);
        std::string layout = x.layout == TableLayout::conditions_as_rows ? "rows" : "columns";
        eo.get("layout", layout);
        eo.get("bicubic_baseline", x.bicubic_baseline);
        eo.finish();
        if (layout == "rows") x.layout = TableLayout::conditions_as_rows;
        else if (layout == "columns") x.layout = TableLayout::conditions_as_columns;
        else throw ConfigError("experiment.layout: expected 'rows' or 'columns'");
    }

    // Every reference must resolve before anything runs.
    const ExperimentConfig& x = c.experiment;
    if (!x.branches.empty() && !c.models.count(x.model)) {
        throw ConfigError("experiment.model: unknown model '" + x.model + "'");
    }
    bool any_sr = false;
    for (std::size_t i = 0; i < x.branches.size(); ++i) {
        const BranchSpec& b = x.branches[i];
        const std::string where = "experiment.branches[" + std::to_string(i) + "]";
        if (is_sr(b.branch)) {
            any_sr = true;
            continue;
        }
        require_name(c.degradations, b.from, where + ".from");
        require_name(c.degradations, b.to, where + ".to");
    }
    if (any_sr) {
        require_name(c.degradations, x.unknown, "experiment.unknown");
        if (c.cross_corpus) {
            if (x.cross_unknown.empty()) throw ConfigError("experiment.cross_unknown: required with a cross_corpus");
            require_name(c.degradations, x.cross_unknown, "experiment.cross_unknown");
        }
    }
    return c;
}

json to_json(const RunConfig& c) {
    json j;
    j["corpus"] = to_json(c.corpus);
    if (c.cross_corpus) j["cross_corpus"] = to_json(*c.cross_corpus);
    j["degradations"] = json::object();
    for (const auto& [k, v] : c.degradations) j["degradations"][k] = to_json(v);
    j["models"] = json::object();
    for (const auto& [k, v] : c.models) j["models"][k] = to_json(v);
    j["training"] = {{"base", to_json(c.training)}, {"overrides", json::object()}};
    for (const auto& [k, v] : c.training_overrides) j["training"]["overrides"][k] = to_json(v);
    json branches = json::array();
    for (const auto& b : c.experiment.branches) {
        if (is_sr(b.branch)) branches.push_back(std::string(branch_name(b.branch)));
        else branches.push_back({{"branch", std::string(branch_name(b.branch))}, {"from", b.from}, {"to", b.to}});
    }
    const ExperimentConfig& x = c.experiment;
    j["experiment"] = {{"branches", branches},
                       {"model", x.model},
                       {"unknown", x.unknown},
                       {"cross_unknown", x.cross_unknown},
                       {"seed", x.seed},
                       {"output_dir", x.output_dir},
                       {"layout", x.layout == TableLayout::conditions_as_rows ? "rows" : "columns"},
                       {"bicubic_baseline", x.bicubic_baseline}};
    return j;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    json j;
    try {
        j = json::parse(buf.str(), nullptr, true, /*ignore_comments=*/true);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return run_config_from_json(j);
}

std::vector<std::string> preset_names() { return {"fig3-desk", "table3-desk"}; }

RunConfig preset(const std::string& name) {
    if (name == "fig3-desk") return run_config_from_json(json::parse(kFig3Desk));
    if (name == "table3-desk") return run_config_from_json(json::parse(kTable3Desk));
    throw ConfigError("unknown preset '" + name + "' (available: fig3-desk, table3-desk)");
}

std::vector<ImageRecord> load_corpus(const CorpusConfig& c) {
    if (c.synth) return synth_corpus(c.synth->n, c.synth->size, c.synth->seed);
    return load_dir(c.dir, c.pattern).records;
}

ExperimentSetup make_setup(const RunConfig& c) {
    ExperimentSetup s;
    const auto records = load_corpus(c.corpus);
    if (static_cast<std::size_t>(c.corpus.n_train) >= records.size()) {
        throw ConfigError("corpus.n_train: " + std::to_string(c.corpus.n_train) + " leaves no held-out images of " +
                          std::to_string(records.size()));
    }
    Split sp = split(records, static_cast<std::size_t>(c.corpus.n_train));
    s.train_gt = std::move(sp.train);
    s.test_gt = std::move(sp.held_out);
    if (c.cross_corpus) {
        Split cross = split(load_corpus(*c.cross_corpus), static_cast<std::size_t>(c.cross_corpus->n_train));
        s.cross_test_gt = std::move(cross.held_out);
        s.cross_unknown = c.experiment.cross_unknown;
    }
    s.degradations = c.degradations;
    s.unknown = c.experiment.unknown;
    if (const auto it = c.models.find(c.experiment.model); it != c.models.end()) s.model = it->second;
    s.train = c.training;
    s.train_overrides = c.training_overrides;
    s.seed = c.experiment.seed;
    s.branches = c.experiment.branches;
    s.bicubic_baseline = c.experiment.bicubic_baseline;
    return s;
}

}  // namespace dasr

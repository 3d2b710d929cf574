#include "dasr/config.hpp"

#include "strict_object.hpp"

namespace dasr {

using nlohmann::json;
using detail::StrictObject;

json to_json(const ModelConfig& c) {
    return json{{"n_groups", c.n_groups},     {"n_blocks", c.n_blocks},
                {"channels", c.channels},     {"reduction", c.reduction},
                {"scale", c.scale},           {"in_channels", c.in_channels},
                {"kernel_size", c.kernel_size}, {"variant", std::string(variant_name(c.variant))},
                {"res_scale", c.res_scale},   {"seed", c.seed}};
}

json to_json(const TrainConfig& c) {
    return json{{"batch_size", c.batch_size}, {"patch_size", c.patch_size}, {"lr0", c.lr0},
                {"beta1", c.beta1},           {"beta2", c.beta2},           {"epsilon", c.epsilon},
                {"halve_every", c.halve_every}, {"total_iters", c.total_iters}, {"seed", c.seed},
                {"log_every", c.log_every},   {"flips", c.flips}};
}

json to_json(const DegradationSpec& s) {
    json steps = json::array();
    for (const auto& step : s.steps()) {
        std::visit(
            [&](const auto& st) {
                using S = std::decay_t<decltype(st)>;
                if constexpr (std::is_same_v<S, BicubicDown>) {
                    steps.push_back({{"bicubic_down", st.scale}});
                } else if constexpr (std::is_same_v<S, BicubicUp>) {
                    steps.push_back({{"bicubic_up", st.scale}});
                } else if constexpr (std::is_same_v<S, Blur>) {
                    steps.push_back({{"blur", {{"size", st.size}, {"sigma", st.sigma}}}});
                } else {
                    steps.push_back({{"noise", {{"psnr_db", st.target_psnr_db}, {"seed", st.seed}}}});
                }
            },
            step);
    }
    return steps;
}

ModelConfig model_config_from_json(const json& j, const std::string& where, ModelConfig c) {
    StrictObject o(j, where);
    o.get("n_groups", c.n_groups);
    o.get("n_blocks", c.n_blocks);
    o.get("channels", c.channels);
    o.get("reduction", c.reduction);
    o.get("scale", c.scale);
    o.get("in_channels", c.in_channels);
    o.get("kernel_size", c.kernel_size);
    std::string variant(variant_name(c.variant));
    o.get("variant", variant);
    o.get("res_scale", c.res_scale);
    o.get("seed", c.seed);
    o.finish();
    try {
        c.variant = parse_variant(variant);
        c.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(where + ": " + e.what());
    }
    return c;
}

TrainConfig train_config_from_json(const json& j, const std::string& where, TrainConfig c) {
    StrictObject o(j, where);
    o.get("batch_size", c.batch_size);
    o.get("patch_size", c.patch_size);
    o.get("lr0", c.lr0);
    o.get("beta1", c.beta1);
    o.get("beta2", c.beta2);
    o.get("epsilon", c.epsilon);
    o.get("halve_every", c.halve_every);
    o.get("total_iters", c.total_iters);
    o.get("seed", c.seed);
    o.get("log_every", c.log_every);
    o.get("flips", c.flips);
    o.finish();
    try {
        c.validate();
    } catch (const Error& e) {
        throw ConfigError(where + ": " + e.what());
    }
    return c;
}

DegradationSpec degradation_from_json(const json& j, const std::string& where) {
    if (!j.is_array()) throw ConfigError(where + ": expected an array of steps");
    std::vector<DegradationStep> steps;
    for (std::size_t i = 0; i < j.size(); ++i) {
        const std::string at = where + "[" + std::to_string(i) + "]";
        const json& s = j[i];
        if (!s.is_object() || s.size() != 1) {
            throw ConfigError(at + ": a step is an object with exactly one of bicubic_down, bicubic_up, blur, noise");
        }
        const std::string kind = s.begin().key();
        const json& body = s.begin().value();
        try {
            if (kind == "bicubic_down" || kind == "bicubic_up") {
                if (!body.is_number_integer()) throw ConfigError(at + "." + kind + ": expected an integer scale");
                const int scale = body.get<int>();
                if (kind == "bicubic_down") steps.emplace_back(BicubicDown{scale});
                else steps.emplace_back(BicubicUp{scale});
            } else if (kind == "blur") {
                StrictObject o(body, at + ".blur");
                Blur b;
                o.get("size", b.size);
                b.sigma = default_blur_sigma(b.size);
                o.get("sigma", b.sigma);
                o.finish();
                steps.emplace_back(b);
            } else if (kind == "noise") {
                StrictObject o(body, at + ".noise");
                Noise n;
                o.get("psnr_db", n.target_psnr_db);
                o.get("seed", n.seed);
                o.finish();
                steps.emplace_back(n);
            } else {
                throw ConfigError(at + ": unknown step '" + kind + "'");
            }
            validate_step(steps.back());
        } catch (const ConfigError&) {
            throw;
        } catch (const Error& e) {
            throw ConfigError(at + ": " + e.what());
        }
    }
    return DegradationSpec(std::move(steps));
}

}  // namespace dasr

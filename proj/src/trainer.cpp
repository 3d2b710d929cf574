#include "dasr/trainer.hpp"

#include <cmath>
#include <iostream>

#include "dasr/ops.hpp"
#include "dasr/tape.hpp"

namespace dasr {

void TrainConfig::validate() const {
    auto fail = [](const std::string& msg) { throw Error("train config: " + msg); };
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (patch_size < 1) fail("patch_size must be >= 1");
    if (!(lr0 > 0.0) || !std::isfinite(lr0)) fail("lr0 must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1 must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2 must lie in [0, 1)");
    if (!(epsilon > 0.0)) fail("epsilon must be positive");
    if (halve_every < 1) fail("halve_every must be >= 1");
    if (total_iters < 0) fail("total_iters must be >= 0");
    if (total_iters > 0 && halve_every > total_iters) fail("halve_every must not exceed total_iters");
    if (log_every < 0) fail("log_every must be >= 0");
}

TrainConfig TrainConfig::full_scale() {
    TrainConfig c;
    c.batch_size = 8;
    c.patch_size = 96;
    c.lr0 = 1e-4;
    c.beta1 = 0.9;
    c.beta2 = 0.99;
    c.epsilon = 1e-8;
    c.halve_every = 50000;
    c.total_iters = 150000;
    return c;
}

double lr_at(int iter, const TrainConfig& config) {
    if (iter < 0) throw Error("lr_at: negative iteration");
    if (config.total_iters > 0 && iter >= config.total_iters) {
        throw Error("lr_at: iteration " + std::to_string(iter) + " is past total_iters " +
                    std::to_string(config.total_iters));
    }
    return config.lr0 * std::ldexp(1.0, -(iter / config.halve_every));
}

AdamState AdamState::zeros_like(const std::vector<NamedParameter<float>>& params) {
    AdamState s;
    for (const auto& p : params) {
        s.m.emplace_back(p.value.numel(), 0.0f);
        s.v.emplace_back(p.value.numel(), 0.0f);
    }
    return s;
}

void adam_step(std::vector<NamedParameter<float>>& params, AdamState& state, int iter, double lr,
               const TrainConfig& config) {
    if (iter < 1) throw Error("adam_step: step number must be >= 1");
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw Error("adam_step: optimizer state does not match the parameter list");
    }
    for (const auto& p : params) {
        if (!p.value.has_grad()) continue;
        for (float g : p.value.grad()) {
            if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in parameter '" + p.name + "'");
        }
    }
    const double b1 = config.beta1, b2 = config.beta2;
    const double bc1 = 1.0 - std::pow(b1, iter);
    const double bc2 = 1.0 - std::pow(b2, iter);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        if (!p.value.has_grad()) continue;
        const auto g = p.value.grad();
        auto w = p.value.mutable_values();
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (m.size() != w.size() || v.size() != w.size()) {
            throw Error("adam_step: moment size mismatch for '" + p.name + "'");
        }
        for (std::size_t k = 0; k < w.size(); ++k) {
            const double gk = g[k];
            const double mk = b1 * m[k] + (1.0 - b1) * gk;
            const double vk = b2 * v[k] + (1.0 - b2) * (gk * gk);
            m[k] = static_cast<float>(mk);
            v[k] = static_cast<float>(vk);
            const double m_hat = static_cast<double>(m[k]) / bc1;
            const double v_hat = static_cast<double>(v[k]) / bc2;
            w[k] = static_cast<float>(w[k] - lr * m_hat / (std::sqrt(v_hat) + config.epsilon));
        }
    }
}

PatchOffset draw_patch_offset(int height, int width, int patch, Rng& rng) {
    if (patch < 1 || height < patch || width < patch) {
        throw ShapeError("patch " + std::to_string(patch) + " does not fit a " + std::to_string(height) + "x" +
                         std::to_string(width) + " image");
    }
    PatchOffset o;
    o.y = rng.uniform_int(height - patch + 1);
    o.x = rng.uniform_int(width - patch + 1);
    return o;
}

namespace {

Tensor<float> crop(const Tensor<float>& t, int y0, int x0, int h, int w) {
    const Shape& s = t.shape();
    Tensor<float> out({s.n, s.c, h, w});
    auto dst = out.mutable_values();
    const float* src = t.data();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < h; ++y) {
                const float* row = src + t.index(n, c, y0 + y, x0);
                std::copy(row, row + w, dst.begin() + static_cast<std::ptrdiff_t>(out.index(n, c, y, 0)));
            }
    return out;
}

void copy_parameters(std::vector<NamedParameter<float>>& dst, const std::vector<NamedParameter<float>>& src) {
    if (dst.size() != src.size()) throw Error("parameter lists differ in length");
    for (std::size_t i = 0; i < dst.size(); ++i) {
        if (dst[i].name != src[i].name || dst[i].value.shape() != src[i].value.shape()) {
            throw Error("parameter '" + src[i].name + "' does not match model parameter '" + dst[i].name + "'");
        }
        const auto v = src[i].value.values();
        std::copy(v.begin(), v.end(), dst[i].value.mutable_values().begin());
    }
}

std::vector<NamedParameter<float>> snapshot(const std::vector<NamedParameter<float>>& params) {
    std::vector<NamedParameter<float>> out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back({p.name, p.value.clone()});
    return out;
}

}  // namespace

std::pair<Tensor<float>, Tensor<float>> sample_patch_pair(const Tensor<float>& input, const Tensor<float>& target,
                                                          int patch, int scale, Rng& rng) {
    const Shape& si = input.shape();
    const Shape& st = target.shape();
    if (scale < 1 || st.h != si.h * scale || st.w != si.w * scale || st.c != si.c || st.n != si.n) {
        throw ShapeError("sample_patch_pair: target " + st.str() + " is not input " + si.str() + " x" +
                         std::to_string(scale));
    }
    const PatchOffset o = draw_patch_offset(si.h, si.w, patch, rng);
    return {crop(input, o.y, o.x, patch, patch), crop(target, o.y * scale, o.x * scale, patch * scale, patch * scale)};
}

Model<float> Checkpoint::model() const {
    Model<float> m(model_config);
    copy_parameters(m.parameters(), parameters);
    return m;
}

TrainResult train(Model<float>& model, const PairedDataset& data, const TrainConfig& config,
                  const TrainOptions& options) {
    config.validate();
    data.validate();
    if (data.pairs.empty()) throw Error("train: dataset is empty");
    if (data.scale != model.config().scale) {
        throw Error("train: dataset scale x" + std::to_string(data.scale) + " does not match model scale x" +
                    std::to_string(model.config().scale));
    }
    for (const auto& p : data.pairs) {
        const Shape& s = p.input.pixels.shape();
        if (s.h < config.patch_size || s.w < config.patch_size) {
            throw ShapeError("train: input '" + p.input.id + "' " + s.str() + " is smaller than patch " +
                             std::to_string(config.patch_size));
        }
    }

    auto& params = model.parameters();
    Rng rng(config.seed);
    AdamState state = AdamState::zeros_like(params);
    std::vector<float> history;
    int start = 0;
    if (options.resume) {
        const Checkpoint& r = *options.resume;
        if (!(r.model_config == model.config())) throw Error("train: resume checkpoint has a different model config");
        if (!(r.train_config == config)) throw Error("train: resume checkpoint has a different training config");
        copy_parameters(params, r.parameters);
        state = r.adam;
        rng.set_state(r.rng_state);
        start = r.iteration;
        history = r.loss_history;
    }
    const int end = options.stop_after >= 0 ? std::min(options.stop_after, config.total_iters) : config.total_iters;

    auto make_checkpoint = [&](int iteration, const std::string& rng_state) {
        Checkpoint c;
        c.model_config = model.config();
        c.train_config = config;
        c.iteration = iteration;
        c.rng_state = rng_state;
        c.parameters = snapshot(params);
        c.adam = state;
        c.loss_history = history;
        return c;
    };

    model.set_requires_grad(true);
    const int n = static_cast<int>(data.pairs.size());
    const int scale = data.scale;
    std::vector<Tensor<float>> inputs(static_cast<std::size_t>(config.batch_size));
    std::vector<Tensor<float>> targets(static_cast<std::size_t>(config.batch_size));
    for (int it = start; it < end; ++it) {
        const std::string rng_before = rng.state();
        for (int b = 0; b < config.batch_size; ++b) {
            const ImagePair& pair = data.pairs[static_cast<std::size_t>(rng.uniform_int(n))];
            auto [x, y] = sample_patch_pair(pair.input.pixels, pair.target.pixels, config.patch_size, scale, rng);
            if (config.flips && rng.uniform() < 0.5) {
                x = flip_horizontal(x);
                y = flip_horizontal(y);
            }
            inputs[static_cast<std::size_t>(b)] = std::move(x);
            targets[static_cast<std::size_t>(b)] = std::move(y);
        }
        const Tensor<float> xb = stack<float>(inputs);
        const Tensor<float> yb = stack<float>(targets);

        float loss_value = 0.0f;
        {
            Tape<float> tape;
            auto scope = tape.activate();
            Tensor<float> loss = l1_loss(model.forward(xb), yb);
            loss_value = loss.item();
            if (!std::isfinite(loss_value)) {
                model.set_requires_grad(false);
                throw TrainingAborted("train: non-finite loss at iteration " + std::to_string(it + 1),
                                      make_checkpoint(it, rng_before));
            }
            tape.backward(loss);
        }
        try {
            adam_step(params, state, it + 1, lr_at(it, config), config);
        } catch (const NumericError& e) {
            model.set_requires_grad(false);
            throw TrainingAborted(std::string(e.what()) + " at iteration " + std::to_string(it + 1),
                                  make_checkpoint(it, rng_before));
        }
        history.push_back(loss_value);
        if (config.log_every > 0 && (it + 1) % config.log_every == 0 && options.on_log) {
            options.on_log(it + 1, loss_value);
        }
    }
    model.set_requires_grad(false);
    TrainResult result;
    result.checkpoint = make_checkpoint(end, rng.state());
    result.loss_history = history;
    return result;
}

}  // namespace dasr

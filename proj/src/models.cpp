#include "dasr/models.hpp"

#include <cmath>

#include "dasr/ops.hpp"
#include "dasr/rng.hpp"

namespace dasr {

std::string_view variant_name(Variant v) noexcept { return v == Variant::rcan ? "rcan" : "edsr"; }

Variant parse_variant(std::string_view name) {
    if (name == "rcan") return Variant::rcan;
    if (name == "edsr") return Variant::edsr;
    throw Error("unknown model variant '" + std::string(name) + "' (expected rcan or edsr)");
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw Error("model config: " + msg); };
    if (n_groups < 1) fail("n_groups must be >= 1");
    if (n_blocks < 0) fail("n_blocks must be >= 0");
    if (channels < 1) fail("channels must be >= 1");
    if (in_channels < 1) fail("in_channels must be >= 1");
    if (scale != 1 && scale != 2 && scale != 4) fail("scale must be 1, 2 or 4, got " + std::to_string(scale));
    if (kernel_size != 3) fail("kernel_size must be 3");
    if (!(res_scale > 0.0)) fail("res_scale must be positive");
    if (variant == Variant::rcan) {
        if (reduction < 1 || channels % reduction != 0) {
            fail("channels (" + std::to_string(channels) + ") must be divisible by reduction (" +
                 std::to_string(reduction) + ")");
        }
    } else if (n_groups != 1) {
        fail("edsr has a single flat block sequence; n_groups must be 1");
    }
}

template <class T>
typename Model<T>::Conv Model<T>::add_conv(const std::string& name, int cout, int cin, int k) {
    Conv c{params_.size(), params_.size() + 1};
    params_.push_back({name + ".weight", Tensor<T>({cout, cin, k, k})});
    params_.push_back({name + ".bias", Tensor<T>({1, cout, 1, 1})});
    return c;
}

template <class T>
Model<T>::Model(const ModelConfig& config) : config_(config) {
    config_.validate();
    const int ch = config_.channels;
    const int k = config_.kernel_size;
    const bool rcan = config_.variant == Variant::rcan;

    head_ = add_conv("head", ch, config_.in_channels, k);
    for (int g = 0; g < config_.n_groups; ++g) {
        Group group;
        const std::string gname = rcan ? "body.g" + std::to_string(g) : "body";
        for (int b = 0; b < config_.n_blocks; ++b) {
            const std::string bname = gname + ".b" + std::to_string(b);
            Block block;
            block.conv1 = add_conv(bname + ".conv1", ch, ch, k);
            block.conv2 = add_conv(bname + ".conv2", ch, ch, k);
            if (rcan) {
                block.attention = true;
                block.down = add_conv(bname + ".ca.down", ch / config_.reduction, ch, 1);
                block.up = add_conv(bname + ".ca.up", ch, ch / config_.reduction, 1);
            }
            group.blocks.push_back(block);
        }
        if (rcan) {
            group.has_conv = true;
            group.conv = add_conv(gname + ".conv", ch, ch, k);
        }
        groups_.push_back(std::move(group));
    }
    trunk_ = add_conv("trunk", ch, ch, k);
    for (int s = config_.scale; s > 1; s /= 2) {
        upsample_.push_back(add_conv("upsample." + std::to_string(upsample_.size()), 4 * ch, ch, k));
    }
    tail_ = add_conv("tail", config_.in_channels, ch, k);

    Rng rng(config_.seed);
    for (auto& p : params_) {
        if (p.name.ends_with(".bias")) continue;  // zero
        const Shape& s = p.value.shape();
        const double bound = std::sqrt(6.0 / static_cast<double>(s.c * s.h * s.w));
        for (auto& v : p.value.mutable_values()) v = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
    }
}

template <class T>
std::size_t Model<T>::parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
}

template <class T>
Tensor<T>* Model<T>::find(std::string_view name) {
    for (auto& p : params_)
        if (p.name == name) return &p.value;
    return nullptr;
}

template <class T>
const Tensor<T>* Model<T>::find(std::string_view name) const {
    for (const auto& p : params_)
        if (p.name == name) return &p.value;
    return nullptr;
}

template <class T>
void Model<T>::set_requires_grad(bool on) {
    for (auto& p : params_) p.value.set_requires_grad(on);
}

template <class T>
Tensor<T> Model<T>::apply(const Conv& c, const Tensor<T>& x) const {
    const Tensor<T>& w = params_[c.weight].value;
    return conv2d(x, w, params_[c.bias].value, 1, w.shape().h / 2);
}

template <class T>
Tensor<T> Model<T>::attention(const Block& b, const Tensor<T>& features) const {
    return sigmoid(apply(b.up, relu(apply(b.down, global_avg_pool(features)))));
}

template <class T>
Tensor<T> Model<T>::residual_branch(const Block& b, const Tensor<T>& x, const ForwardOptions& options) const {
    Tensor<T> r = apply(b.conv2, relu(apply(b.conv1, x)));
    if (b.attention && !options.unit_gate) r = mul(r, attention(b, r));
    if (config_.res_scale != 1.0) r = scale(r, static_cast<T>(config_.res_scale));
    return r;
}

template <class T>
Tensor<T> Model<T>::forward_block(int group, int block, const Tensor<T>& x, const ForwardOptions& options) const {
    const Block& b = groups_.at(static_cast<std::size_t>(group)).blocks.at(static_cast<std::size_t>(block));
    return add(x, residual_branch(b, x, options));
}

template <class T>
Tensor<T> Model<T>::gate(int group, int block, const Tensor<T>& x) const {
    const Block& b = groups_.at(static_cast<std::size_t>(group)).blocks.at(static_cast<std::size_t>(block));
    if (!b.attention) throw Error("gate: block has no channel attention");
    return attention(b, apply(b.conv2, relu(apply(b.conv1, x))));
}

template <class T>
Tensor<T> Model<T>::forward(const Tensor<T>& input, const ForwardOptions& options) const {
    if (input.shape().c != config_.in_channels) {
        throw ShapeError("model forward: input has " + std::to_string(input.shape().c) + " channels, expected " +
                         std::to_string(config_.in_channels));
    }
    const Tensor<T> head = apply(head_, input);
    Tensor<T> x = head;
    for (const auto& g : groups_) {
        Tensor<T> y = x;
        for (const auto& b : g.blocks) y = add(y, residual_branch(b, y, options));
        x = g.has_conv ? add(x, apply(g.conv, y)) : y;
    }
    x = add(head, apply(trunk_, x));
    for (const auto& c : upsample_) x = pixel_shuffle(apply(c, x), 2);
    return apply(tail_, x);
}

template <class T>
Tensor<T> Model<T>::infer(const Tensor<T>& input) const {
    // Detached view: shares parameter storage but never records.
    Model<T> view;
    view.config_ = config_;
    for (const auto& p : params_) view.params_.push_back({p.name, p.value.detach()});
    view.head_ = head_;
    view.groups_ = groups_;
    view.trunk_ = trunk_;
    view.upsample_ = upsample_;
    view.tail_ = tail_;
    return clamp01(view.forward(input.detach()));
}

Model<float> build_rcan(ModelConfig config) {
    config.variant = Variant::rcan;
    return Model<float>(config);
}

Model<float> build_edsr(ModelConfig config) {
    config.variant = Variant::edsr;
    return Model<float>(config);
}

Model<float> build_model(const ModelConfig& config) { return Model<float>(config); }

template class Model<float>;
template class Model<double>;

}  // namespace dasr

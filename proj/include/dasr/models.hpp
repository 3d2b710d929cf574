#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dasr/tensor.hpp"

namespace dasr {

enum class Variant { rcan, edsr };

std::string_view variant_name(Variant v) noexcept;
Variant parse_variant(std::string_view name);

struct ModelConfig {
    int n_groups = 2;
    int n_blocks = 2;  // per group; EDSR has a single flat group
    int channels = 16;
    int reduction = 4;
    int scale = 2;  // 1 builds no upsampler
    int in_channels = 3;
    int kernel_size = 3;
    Variant variant = Variant::rcan;
    double res_scale = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

template <class T>
struct NamedParameter {
    std::string name;
    Tensor<T> value;
};

struct ForwardOptions {
    // Replaces every channel-attention gate by 1.
    bool unit_gate = false;
};

template <class T>
class Model {
public:
    struct Conv {
        std::size_t weight;
        std::size_t bias;
    };
    struct Block {
        Conv conv1, conv2;
        bool attention = false;
        Conv down{}, up{};
    };
    struct Group {
        std::vector<Block> blocks;
        bool has_conv = false;
        Conv conv{};
    };

    Model() = default;
    // Builds the architecture with Kaiming-uniform weights drawn from
    // config.seed and zero biases.
    explicit Model(const ModelConfig& config);

    const ModelConfig& config() const noexcept { return config_; }
    std::vector<NamedParameter<T>>& parameters() noexcept { return params_; }
    const std::vector<NamedParameter<T>>& parameters() const noexcept { return params_; }
    std::size_t parameter_count() const noexcept;

    // nullptr when absent.
    Tensor<T>* find(std::string_view name);
    const Tensor<T>* find(std::string_view name) const;

    void set_requires_grad(bool on);

    /// Raw network output, recorded on the active tape when parameters
    /// require grad or the input is traced.
    Tensor<T> forward(const Tensor<T>& input, const ForwardOptions& options = {}) const;

    // Inference: untraced forward clipped to [0, 1].
    Tensor<T> infer(const Tensor<T>& input) const;

    // One residual block in isolation.
    Tensor<T> forward_block(int group, int block, const Tensor<T>& x, const ForwardOptions& options = {}) const;
    // Channel-attention gate (N, C, 1, 1) of one block for the block input x.
    Tensor<T> gate(int group, int block, const Tensor<T>& x) const;

    const std::vector<Group>& groups() const noexcept { return groups_; }

    template <class U>
    Model<U> cast() const;
    // Independent deep copy; plain copies share parameter storage.
    Model clone() const { return cast<T>(); }

private:
    template <class U>
    friend class Model;

    Conv add_conv(const std::string& name, int cout, int cin, int k);
    Tensor<T> apply(const Conv& c, const Tensor<T>& x) const;
    Tensor<T> residual_branch(const Block& b, const Tensor<T>& x, const ForwardOptions& options) const;
    Tensor<T> attention(const Block& b, const Tensor<T>& features) const;

    ModelConfig config_;
    std::vector<NamedParameter<T>> params_;
    Conv head_{};
    std::vector<Group> groups_;
    Conv trunk_{};
    std::vector<Conv> upsample_;
    Conv tail_{};
};

template <class T>
template <class U>
Model<U> Model<T>::cast() const {
    Model<U> out;
    out.config_ = config_;
    out.params_.reserve(params_.size());
    for (const auto& p : params_) out.params_.push_back({p.name, p.value.template cast<U>()});
    out.head_ = {head_.weight, head_.bias};
    for (const auto& g : groups_) {
        typename Model<U>::Group ng;
        ng.has_conv = g.has_conv;
        ng.conv = {g.conv.weight, g.conv.bias};
        for (const auto& b : g.blocks) {
            typename Model<U>::Block nb;
            nb.conv1 = {b.conv1.weight, b.conv1.bias};
            nb.conv2 = {b.conv2.weight, b.conv2.bias};
            nb.attention = b.attention;
            nb.down = {b.down.weight, b.down.bias};
            nb.up = {b.up.weight, b.up.bias};
            ng.blocks.push_back(nb);
        }
        out.groups_.push_back(std::move(ng));
    }
    out.trunk_ = {trunk_.weight, trunk_.bias};
    for (const auto& c : upsample_) out.upsample_.push_back({c.weight, c.bias});
    out.tail_ = {tail_.weight, tail_.bias};
    return out;
}

Model<float> build_rcan(ModelConfig config);
Model<float> build_edsr(ModelConfig config);
// Dispatches on config.variant.
Model<float> build_model(const ModelConfig& config);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace dasr

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dasr/datasets.hpp"
#include "dasr/models.hpp"
#include "dasr/rng.hpp"

namespace dasr {

struct TrainConfig {
    int batch_size = 4;
    int patch_size = 24;  // on the network-input grid
    double lr0 = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double epsilon = 1e-8;
    int halve_every = 1000;
    int total_iters = 2000;
    std::uint64_t seed = 0;
    int log_every = 100;  // 0 disables progress lines
    bool flips = false;   // random horizontal flips of each patch pair

    void validate() const;
    bool operator==(const TrainConfig&) const = default;

    // 8 patches of 96, lr 1e-4 halved every 50k, 150k iterations.
    static TrainConfig full_scale();
};

/// lr0 * 0.5^floor(iter / halve_every).
double lr_at(int iter, const TrainConfig& config);

// First and second moments per parameter, aligned with the parameter list.
struct AdamState {
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;

    static AdamState zeros_like(const std::vector<NamedParameter<float>>& params);
};

/// One bias-corrected ADAM update with step number `iter` (>= 1), using
/// each parameter's grad. Every gradient is checked before anything is
/// written; a non-finite entry throws NumericError naming the parameter.
void adam_step(std::vector<NamedParameter<float>>& params, AdamState& state, int iter, double lr,
               const TrainConfig& config);

/// Crops a patch x patch input window at a uniform random offset and the
/// aligned (patch * scale)^2 target window at offset * scale.
std::pair<Tensor<float>, Tensor<float>> sample_patch_pair(const Tensor<float>& input, const Tensor<float>& target,
                                                          int patch, int scale, Rng& rng);

// Uniform crop origin; y is drawn before x.
struct PatchOffset {
    int y = 0;
    int x = 0;
};
PatchOffset draw_patch_offset(int height, int width, int patch, Rng& rng);

/// Everything needed to continue training bit-exactly.
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    ModelConfig model_config;
    TrainConfig train_config;
    int iteration = 0;  // completed iterations
    std::string rng_state;
    std::vector<NamedParameter<float>> parameters;
    AdamState adam;
    std::vector<float> loss_history;

    Model<float> model() const;
};

class TrainingAborted : public NumericError {
public:
    TrainingAborted(const std::string& what, Checkpoint last_good)
        : NumericError(what), last_good_(std::move(last_good)) {}
    const Checkpoint& last_good() const noexcept { return last_good_; }

private:
    Checkpoint last_good_;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<float> loss_history;  // one entry per iteration, from iteration 1
};

struct TrainOptions {
    // Continue from this state instead of a fresh model and optimizer.
    const Checkpoint* resume = nullptr;
    // Stop after this many completed iterations (< total_iters) without
    // changing the schedule; -1 runs to total_iters.
    int stop_after = -1;
    std::function<void(int iter, float loss)> on_log;
};

/// Runs total_iters steps of {sample batch, forward, l1 loss, backward,
/// adam} on `model` (updated in place). A non-finite loss or gradient
/// throws TrainingAborted carrying the last finite state.
TrainResult train(Model<float>& model, const PairedDataset& data, const TrainConfig& config,
                  const TrainOptions& options = {});

}  // namespace dasr

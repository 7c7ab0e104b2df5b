#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "palsyfuse/nn/layer.hpp"
#include "palsyfuse/nn/optim.hpp"
#include "palsyfuse/nn/tensor.hpp"

namespace palsyfuse::models {

// What a model consumes. Images are (N, C, H, W) in [0, 1].
enum class Modality { Handcrafted, Expression, Coordinates, RgbImage, BnwImage, Embedding };

std::string to_string(Modality m);
Modality parse_modality(const std::string& s);
bool is_image(Modality m);

// One node of a layer plan. Which fields matter depends on `kind`.
struct LayerSpec {
    nn::LayerKind kind = nn::LayerKind::Linear;
    std::string name;
    std::size_t in = 0;      // Linear, Conv2d, PatchEmbed channels
    std::size_t out = 0;     // Linear, Conv2d, PatchEmbed dim
    std::size_t features = 0;  // BatchNorm1d, LayerNorm
    std::size_t hidden = 0;  // TokenMix, ChannelMix
    std::size_t tokens = 0;  // TokenMix; ChannelMix channels use `features`
    std::size_t kernel = 0, stride = 1, padding = 0;
    std::size_t image = 0, patch = 0;
    double p = 0.0;        // Dropout
    double slope = 0.01;   // LeakyReLU
    bool spatial = false;  // GlobalAvgPool over H, W instead of tokens
    nn::Init init = nn::Init::KaimingUniform;
    std::vector<LayerSpec> body;      // Residual
    std::vector<LayerSpec> shortcut;  // Residual; empty = identity

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct TrainingPlan {
    nn::OptimizerConfig optimizer;
    std::size_t batch_size = 256;
    std::size_t max_epochs = 100;
    std::size_t patience = 0;  // 0 disables early stopping
    std::uint64_t seed = 0;
    // Stop as soon as an epoch ends with training accuracy at or above this.
    std::optional<double> target_accuracy;

    friend bool operator==(const TrainingPlan&, const TrainingPlan&) = default;
};

struct ModelSpec {
    std::string name;
    Modality modality = Modality::Handcrafted;
    nn::Shape input_shape;  // per sample, e.g. {29} or {3, 64, 64}
    std::vector<LayerSpec> layers;
    std::string embedding_tap;  // top-level layer name
    TrainingPlan plan;

    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// Checks names, the tap and that dimensions chain; returns the per-sample
// output shape of each top-level layer.
std::vector<nn::Shape> validate(const ModelSpec& spec);
std::size_t tap_width(const ModelSpec& spec);

std::string to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const std::string& text);
// FNV-1a of the canonical JSON.
std::string config_hash(const ModelSpec& spec);

struct MixerConfig {
    std::size_t image_size = 64;
    std::size_t channels = 3;
    std::size_t patch = 8;
    std::size_t dim = 128;
    std::size_t token_mlp = 64;
    std::size_t channel_mlp = 256;
    std::size_t depth = 4;
};

struct ResNetConfig {
    std::size_t image_size = 64;
    std::size_t channels = 3;
    std::size_t stem = 16;
    std::vector<std::size_t> widths{16, 32, 64};
    std::size_t blocks_per_stage = 2;
    std::size_t head = 512;
    double dropout = 0.5;
};

ModelSpec build_ffn_expression();
ModelSpec build_ffn_coordinates();
ModelSpec build_ffn_handcrafted();
ModelSpec build_mixer_mini(const MixerConfig& c = {});
// RGB schedule by default; set `bnw` for the line-segment schedule
// (one channel, batch 128, up to 100 epochs, patience 3).
ModelSpec build_resnet_mini(const ResNetConfig& c = {}, bool bnw = false);
ModelSpec build_fusion_head(std::size_t input_width, double lr);

std::unique_ptr<nn::Sequential> instantiate(const ModelSpec& spec);

struct EpochStats {
    std::size_t epoch = 0;  // 1-based
    double loss = 0.0;
    double accuracy = 0.0;
};

class TrainedModel {
public:
    TrainedModel(ModelSpec spec, std::unique_ptr<nn::Sequential> net, std::vector<EpochStats> log);
    TrainedModel(TrainedModel&&) noexcept = default;
    TrainedModel& operator=(TrainedModel&&) noexcept = default;

    const ModelSpec& spec() const { return spec_; }
    nn::Sequential& network() { return *net_; }
    const std::vector<EpochStats>& log() const { return log_; }
    const std::string& config_hash() const { return hash_; }

    // Wraps an untrained network, e.g. to load saved weights into it.
    static TrainedModel untrained(ModelSpec spec);

private:
    ModelSpec spec_;
    std::unique_ptr<nn::Sequential> net_;
    std::vector<EpochStats> log_;
    std::string hash_;
};

struct Dataset {
    nn::Tensor inputs;           // (N, ...input_shape)
    std::vector<double> labels;  // N values in {0, 1}
};

using EpochCallback = std::function<void(const EpochStats&)>;

TrainedModel train(const ModelSpec& spec, const Dataset& data, const EpochCallback& on_epoch = {});

// Eval-mode inference, processed in chunks of `chunk` samples.
std::vector<double> predict_proba(TrainedModel& model, const nn::Tensor& inputs, std::size_t chunk = 256);
nn::Tensor embed(TrainedModel& model, const nn::Tensor& inputs, std::size_t chunk = 256);

// Fraction of samples where (p >= 0.5) agrees with the label.
double accuracy(const std::vector<double>& p, const std::vector<double>& labels);

}  // namespace palsyfuse::models

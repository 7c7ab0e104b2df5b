#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "palsyfuse/datamodel.hpp"
#include "palsyfuse/models.hpp"
#include "palsyfuse/nn/tensor.hpp"

namespace palsyfuse::fusion {

enum class FusionMode { Early, Late };

std::string to_string(FusionMode m);
FusionMode parse_fusion_mode(const std::string& s);

struct FusionSpec {
    std::string name;
    FusionMode mode = FusionMode::Early;
    std::array<std::string, 2> members;
    // Early fusion head schedule.
    double lr = 0.01;
    std::size_t batch_size = 128;
    std::size_t max_epochs = 100;
    std::size_t patience = 3;
    std::uint64_t seed = 0;

    friend bool operator==(const FusionSpec&, const FusionSpec&) = default;
};

void validate(const FusionSpec& spec);

// Head plan for two members: input width is the sum of their tap widths.
models::ModelSpec head_spec(const FusionSpec& spec, const models::ModelSpec& a, const models::ModelSpec& b);

// Row-wise concatenation of both members' tap activations.
nn::Tensor fused_embeddings(models::TrainedModel& a, const nn::Tensor& xa, models::TrainedModel& b,
                            const nn::Tensor& xb);

// Trains the head on frozen members. xa/xb hold the same samples in the
// members' modalities.
models::TrainedModel early_fuse_train(const FusionSpec& spec, models::TrainedModel& a, const nn::Tensor& xa,
                                      models::TrainedModel& b, const nn::Tensor& xb,
                                      const std::vector<double>& labels,
                                      const models::EpochCallback& on_epoch = {});

std::vector<double> early_fuse_predict(models::TrainedModel& head, models::TrainedModel& a,
                                       const nn::Tensor& xa, models::TrainedModel& b, const nn::Tensor& xb);

// Decision rule shared by every model: Palsy iff p >= 0.5.
BinaryLabel decide(double p);

struct Prediction {
    std::string subject_id;
    std::string frame_id;
    double probability = 0.0;
    BinaryLabel label = BinaryLabel::NoPalsy;

    friend bool operator==(const Prediction&, const Prediction&) = default;
};

std::vector<double> late_fuse(std::span<const double> pa, std::span<const double> pb);

// Rows are matched by (subject_id, frame_id); the output follows `a`.
std::vector<Prediction> late_fuse_predict(std::span<const Prediction> a, std::span<const Prediction> b);

std::vector<Prediction> make_predictions(std::span<const LandmarkFrame* const> frames,
                                         std::span<const double> probabilities);

// Columns: subject_id,frame_id,probability,label
std::string serialize_predictions_csv(std::span<const Prediction> rows);
std::vector<Prediction> parse_predictions_csv(std::string_view text);
void write_predictions_csv(std::span<const Prediction> rows, const std::filesystem::path& path);
std::vector<Prediction> read_predictions_csv(const std::filesystem::path& path);

}  // namespace palsyfuse::fusion

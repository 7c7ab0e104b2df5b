#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "palsyfuse/datamodel.hpp"
#include "palsyfuse/fusion.hpp"
#include "palsyfuse/models.hpp"
#include "palsyfuse/modalities.hpp"
#include "palsyfuse/synthgen.hpp"

namespace palsyfuse::evaluation {

struct MetricsRecord {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;

    friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

// Zero-denominator ratios are defined as 0.
MetricsRecord metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn);
MetricsRecord compute_metrics(std::span<const BinaryLabel> predicted, std::span<const BinaryLabel> truth);

// ---------------------------------------------------------------- sampling

struct SampleKey {
    std::string frame_id;
    int class_key = 0;
};

// Indices into `frames` in selection order. Each round visits the class
// keys in ascending order and takes the earliest unselected frame_id of each
// nonempty class. The selection is fully determined by the inputs; `seed`
// is accepted for interface stability.
std::vector<std::size_t> round_robin_sample(std::span<const SampleKey> frames, std::size_t n, std::uint64_t seed);
std::vector<const LandmarkFrame*> round_robin_sample(std::span<const LandmarkFrame* const> frames, std::size_t n,
                                                     std::uint64_t seed);

// ---------------------------------------------------------------- LOPO plan

struct ProtocolConfig {
    std::size_t train_healthy = 20;
    std::size_t test_healthy = 20;
    std::size_t train_samples = 50;       // per training subject
    std::size_t test_palsy_samples = 50;  // held-out subject
    std::size_t test_healthy_samples = 2;

    friend bool operator==(const ProtocolConfig&, const ProtocolConfig&) = default;
};

struct SubjectDraw {
    std::string subject_id;
    std::size_t target = 0;

    friend bool operator==(const SubjectDraw&, const SubjectDraw&) = default;
};

struct SplitPlan {
    std::size_t fold = 0;
    std::string held_out;
    std::vector<SubjectDraw> train_palsy;
    std::vector<SubjectDraw> train_healthy;
    std::vector<SubjectDraw> test;  // held-out subject first
    std::uint64_t seed = 0;

    std::size_t train_target() const;
    std::size_t test_target() const;
};

// One fold per palsy subject, in manifest order.
std::vector<SplitPlan> make_lopo_plan(const DatasetManifest& manifest, const ProtocolConfig& config,
                                      std::uint64_t seed);

struct FoldSamples {
    std::vector<const LandmarkFrame*> train;
    std::vector<const LandmarkFrame*> test;
};

// Frames grouped by subject, each group in input order.
using FrameIndex = std::map<std::string, std::vector<const LandmarkFrame*>>;
FrameIndex index_frames(std::span<const LandmarkFrame> frames);

FoldSamples draw_samples(const SplitPlan& plan, const FrameIndex& index);

// ---------------------------------------------------------------- run config

struct TrainingOverrides {
    std::optional<nn::OptimizerKind> optimizer;
    std::optional<double> lr;
    std::optional<double> weight_decay;
    std::optional<std::size_t> batch_size;
    std::optional<std::size_t> max_epochs;
    std::optional<std::size_t> patience;
};

struct ModelEntry {
    std::string name;
    std::string architecture;  // ffn_handcrafted | ffn_expression | ffn_coordinates | mixer_mini | resnet_mini
    models::Modality modality = models::Modality::Handcrafted;
    models::MixerConfig mixer;
    models::ResNetConfig resnet;
    TrainingOverrides overrides;
};

struct DataSource {
    std::optional<std::filesystem::path> frames;
    synth::CohortSpec synthetic;
};

struct RunConfig {
    std::uint64_t seed = 42;
    DataSource data;
    std::optional<std::filesystem::path> roles;
    std::optional<std::filesystem::path> contours;
    std::size_t image_size = 64;
    std::optional<std::filesystem::path> rgb_dir;
    std::optional<std::filesystem::path> bnw_dir;
    ProtocolConfig protocol;
    std::vector<ModelEntry> models;
    std::vector<fusion::FusionSpec> fusions;
    std::optional<std::size_t> threads;
    std::optional<std::filesystem::path> output_dir;
};

// Relative paths are resolved against `base_dir`. Throws ConfigError on
// unknown keys, unknown architectures or modalities, duplicate names and
// fusions naming missing models.
RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_to_json(const RunConfig& config);
std::string config_hash(const RunConfig& config);

// Model spec of an entry for one training run.
models::ModelSpec model_spec(const ModelEntry& entry, std::uint64_t seed, std::size_t image_size);

std::vector<LandmarkFrame> load_frames(const RunConfig& config);
modalities::ModalitySources modality_sources(const RunConfig& config);

// ---------------------------------------------------------------- report

struct FoldResult {
    SplitPlan plan;
    std::vector<std::pair<std::string, std::vector<std::string>>> train_manifest;  // subject -> frame ids
    std::vector<std::pair<std::string, std::vector<std::string>>> test_manifest;
    bool complete = false;
    std::string error;
    std::map<std::string, MetricsRecord> metrics;
};

struct RowSummary {
    std::string name;
    std::string data_modality;
    std::string model;
    std::optional<MetricsRecord> average;  // precision/recall/f1 only
    std::optional<MetricsRecord> pooled;
};

struct RunReport {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::vector<FoldResult> folds;
    std::vector<RowSummary> rows;

    bool complete() const;
};

struct RunOptions {
    std::size_t threads = 1;
    // Receives one plain-text line per finished stage.
    std::function<void(const std::string&)> log;
};

RunReport run_experiment(const RunConfig& config, const RunOptions& options = {});

// Fills averages and pooled metrics from the folds; both stay empty while
// any fold is incomplete.
void summarize(RunReport& report);

std::string report_to_json(const RunReport& report);
RunReport report_from_json(std::string_view text);
std::string report_to_markdown(const RunReport& report);

std::string modality_display(models::Modality m);
std::string architecture_display(const std::string& architecture);

}  // namespace palsyfuse::evaluation

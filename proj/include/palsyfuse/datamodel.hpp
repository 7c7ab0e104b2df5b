#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace palsyfuse {

inline constexpr std::size_t kLandmarkCount = 478;
inline constexpr std::size_t kBlendshapeCount = 52;
inline constexpr std::size_t kHandcraftedCount = 29;
inline constexpr std::size_t kCoordinateCount = kLandmarkCount * 2;

struct Point2 {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Point2&, const Point2&) = default;
};

enum class Source { PalsyVideo, HealthyCorpus, Synthetic };

std::string_view to_string(Source s);
Source parse_source(std::string_view s);

// Per-region palsy intensity. Ordering Normal < Slight < Strong is the
// canonical order used to iterate class keys.
enum class Intensity : std::uint8_t { Normal = 0, Slight = 1, Strong = 2 };

std::string_view to_string(Intensity i);
Intensity parse_intensity(std::string_view s);

enum class BinaryLabel : std::uint8_t { NoPalsy = 0, Palsy = 1 };

std::string_view to_string(BinaryLabel b);
BinaryLabel parse_binary_label(std::string_view s);

struct RegionLabel {
    Intensity eyes = Intensity::Normal;
    Intensity mouth = Intensity::Normal;

    BinaryLabel binary_label() const {
        return (eyes != Intensity::Normal || mouth != Intensity::Normal) ? BinaryLabel::Palsy
                                                                         : BinaryLabel::NoPalsy;
    }

    // Stratum for round-robin sampling; lexicographic over (eyes, mouth).
    int class_key() const { return static_cast<int>(eyes) * 3 + static_cast<int>(mouth); }

    friend bool operator==(const RegionLabel&, const RegionLabel&) = default;
};

// Human readable class key, e.g. "Slight-Eyes-Normal-Mouth".
std::string class_key_name(int key);

struct LandmarkFrame {
    std::string subject_id;
    std::string frame_id;
    Source source = Source::Synthetic;
    std::vector<Point2> landmarks;                  // kLandmarkCount entries
    std::optional<std::vector<double>> blendshapes;  // kBlendshapeCount entries
    std::optional<RegionLabel> label;

    // Frames without a label are treated as (Normal, Normal).
    RegionLabel effective_label() const { return label.value_or(RegionLabel{}); }
    BinaryLabel binary_label() const { return effective_label().binary_label(); }

    friend bool operator==(const LandmarkFrame&, const LandmarkFrame&) = default;
};

// Throws SchemaError naming the frame when an invariant is violated.
void validate(const LandmarkFrame& frame);

// Throws SchemaError on duplicate (subject_id, frame_id).
void validate_unique_ids(std::span<const LandmarkFrame> frames);

enum class FeatureKind { Handcrafted29, Expression52, Coordinates956 };

std::string_view to_string(FeatureKind k);
FeatureKind parse_feature_kind(std::string_view s);
std::size_t feature_length(FeatureKind k);

// Canonical column names: F1..F29, the 52 blendshape names, or x0,y0,...
const std::vector<std::string>& feature_names(FeatureKind k);

struct FeatureVector {
    FeatureKind kind = FeatureKind::Handcrafted29;
    std::vector<double> values;
    std::string subject_id;
    std::string frame_id;

    friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

void validate(const FeatureVector& v);

struct ImageBuffer {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<std::uint8_t> pixels;

    ImageBuffer() = default;
    ImageBuffer(int w, int h, int c, std::uint8_t fill = 0);

    std::uint8_t& at(int row, int col, int ch = 0) {
        return pixels[(static_cast<std::size_t>(row) * width + col) * channels + ch];
    }
    std::uint8_t at(int row, int col, int ch = 0) const {
        return pixels[(static_cast<std::size_t>(row) * width + col) * channels + ch];
    }

    friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;
};

void validate(const ImageBuffer& img);

struct SubjectCensus {
    std::string subject_id;
    Source source = Source::Synthetic;
    std::size_t frame_count = 0;
    std::map<int, std::size_t> census;  // class_key -> frames

    friend bool operator==(const SubjectCensus&, const SubjectCensus&) = default;
};

struct DatasetManifest {
    std::string format_version = "palsyfuse-manifest/1";
    std::vector<SubjectCensus> subjects;

    friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

// A subject counts as a palsy subject when it comes from the palsy corpus,
// or is synthetic and carries at least one non-(Normal, Normal) frame.
bool is_palsy_subject(const SubjectCensus& s);

// Subjects appear in order of first occurrence.
DatasetManifest build_manifest(std::span<const LandmarkFrame> frames);
void validate(const DatasetManifest& m);

}  // namespace palsyfuse

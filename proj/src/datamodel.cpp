#include "palsyfuse/datamodel.hpp"

#include <cmath>
#include <set>
#include <unordered_map>

#include "palsyfuse/error.hpp"

namespace palsyfuse {

std::string_view to_string(Source s) {
    switch (s) {
        case Source::PalsyVideo: return "palsy_video";
        case Source::HealthyCorpus: return "healthy_corpus";
        case Source::Synthetic: return "synthetic";
    }
    return "synthetic";
}

Source parse_source(std::string_view s) {
    if (s == "palsy_video") return Source::PalsyVideo;
    if (s == "healthy_corpus") return Source::HealthyCorpus;
    if (s == "synthetic") return Source::Synthetic;
    throw SchemaError("source: unknown value '" + std::string(s) + "'");
}

std::string_view to_string(Intensity i) {
    switch (i) {
        case Intensity::Normal: return "Normal";
        case Intensity::Slight: return "Slight";
        case Intensity::Strong: return "Strong";
    }
    return "Normal";
}

Intensity parse_intensity(std::string_view s) {
    if (s == "Normal") return Intensity::Normal;
    if (s == "Slight") return Intensity::Slight;
    if (s == "Strong") return Intensity::Strong;
    throw SchemaError("label: unknown intensity '" + std::string(s) + "'");
}

std::string_view to_string(BinaryLabel b) { return b == BinaryLabel::Palsy ? "Palsy" : "NoPalsy"; }

BinaryLabel parse_binary_label(std::string_view s) {
    if (s == "Palsy") return BinaryLabel::Palsy;
    if (s == "NoPalsy") return BinaryLabel::NoPalsy;
    throw SchemaError("unknown binary label '" + std::string(s) + "'");
}

std::string class_key_name(int key) {
    const auto eyes = static_cast<Intensity>(key / 3);
    const auto mouth = static_cast<Intensity>(key % 3);
    return std::string(to_string(eyes)) + "-Eyes-" + std::string(to_string(mouth)) + "-Mouth";
}

namespace {

std::string frame_name(const LandmarkFrame& f) {
    return "frame " + f.subject_id + "/" + f.frame_id;
}

}  // namespace

void validate(const LandmarkFrame& frame) {
    if (frame.landmarks.size() != kLandmarkCount) {
        throw SchemaError(frame_name(frame) + ": landmarks: expected 478, got " +
                          std::to_string(frame.landmarks.size()));
    }
    for (std::size_t i = 0; i < frame.landmarks.size(); ++i) {
        const auto& p = frame.landmarks[i];
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
            throw SchemaError(frame_name(frame) + ": landmarks[" + std::to_string(i) +
                              "] is not finite");
        }
    }
    if (frame.blendshapes) {
        const auto& b = *frame.blendshapes;
        if (b.size() != kBlendshapeCount) {
            throw SchemaError(frame_name(frame) + ": blendshapes: expected 52, got " +
                              std::to_string(b.size()));
        }
        for (std::size_t i = 0; i < b.size(); ++i) {
            if (!(b[i] >= 0.0 && b[i] <= 1.0)) {
                throw SchemaError(frame_name(frame) + ": blendshapes[" + std::to_string(i) +
                                  "] out of range [0,1]");
            }
        }
    }
}

void validate_unique_ids(std::span<const LandmarkFrame> frames) {
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& f : frames) {
        if (!seen.emplace(f.subject_id, f.frame_id).second) {
            throw SchemaError("duplicate " + frame_name(f));
        }
    }
}

std::string_view to_string(FeatureKind k) {
    switch (k) {
        case FeatureKind::Handcrafted29: return "handcrafted29";
        case FeatureKind::Expression52: return "expression52";
        case FeatureKind::Coordinates956: return "coordinates956";
    }
    return "handcrafted29";
}

FeatureKind parse_feature_kind(std::string_view s) {
    if (s == "handcrafted29") return FeatureKind::Handcrafted29;
    if (s == "expression52") return FeatureKind::Expression52;
    if (s == "coordinates956") return FeatureKind::Coordinates956;
    throw SchemaError("unknown feature kind '" + std::string(s) + "'");
}

std::size_t feature_length(FeatureKind k) {
    switch (k) {
        case FeatureKind::Handcrafted29: return kHandcraftedCount;
        case FeatureKind::Expression52: return kBlendshapeCount;
        case FeatureKind::Coordinates956: return kCoordinateCount;
    }
    return 0;
}

const std::vector<std::string>& feature_names(FeatureKind k) {
    static const std::vector<std::string> handcrafted = [] {
        std::vector<std::string> v;
        for (std::size_t i = 1; i <= kHandcraftedCount; ++i) v.push_back("F" + std::to_string(i));
        return v;
    }();
    // Blendshape order of the 52-coefficient expression model.
    static const std::vector<std::string> expression = {
        "_neutral",         "browDownLeft",       "browDownRight",     "browInnerUp",
        "browOuterUpLeft",  "browOuterUpRight",   "cheekPuff",         "cheekSquintLeft",
        "cheekSquintRight", "eyeBlinkLeft",       "eyeBlinkRight",     "eyeLookDownLeft",
        "eyeLookDownRight", "eyeLookInLeft",      "eyeLookInRight",    "eyeLookOutLeft",
        "eyeLookOutRight",  "eyeLookUpLeft",      "eyeLookUpRight",    "eyeSquintLeft",
        "eyeSquintRight",   "eyeWideLeft",        "eyeWideRight",      "jawForward",
        "jawLeft",          "jawOpen",            "jawRight",          "mouthClose",
        "mouthDimpleLeft",  "mouthDimpleRight",   "mouthFrownLeft",    "mouthFrownRight",
        "mouthFunnel",      "mouthLeft",          "mouthLowerDownLeft", "mouthLowerDownRight",
        "mouthPressLeft",   "mouthPressRight",    "mouthPucker",       "mouthRight",
        "mouthRollLower",   "mouthRollUpper",     "mouthShrugLower",   "mouthShrugUpper",
        "mouthSmileLeft",   "mouthSmileRight",    "mouthStretchLeft",  "mouthStretchRight",
        "mouthUpperUpLeft", "mouthUpperUpRight",  "noseSneerLeft",     "noseSneerRight"};
    static const std::vector<std::string> coordinates = [] {
        std::vector<std::string> v;
        for (std::size_t i = 0; i < kLandmarkCount; ++i) {
            v.push_back("x" + std::to_string(i));
            v.push_back("y" + std::to_string(i));
        }
        return v;
    }();
    switch (k) {
        case FeatureKind::Handcrafted29: return handcrafted;
        case FeatureKind::Expression52: return expression;
        case FeatureKind::Coordinates956: return coordinates;
    }
    return handcrafted;
}

void validate(const FeatureVector& v) {
    const auto n = feature_length(v.kind);
    if (v.values.size() != n) {
        throw SchemaError(std::string(to_string(v.kind)) + " vector for " + v.subject_id + "/" +
                          v.frame_id + ": expected " + std::to_string(n) + " values, got " +
                          std::to_string(v.values.size()));
    }
    const bool unit_range = v.kind != FeatureKind::Coordinates956;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = v.values[i];
        if (!std::isfinite(x) || (unit_range && (x < 0.0 || x > 1.0))) {
            throw SchemaError(std::string(to_string(v.kind)) + " vector for " + v.subject_id +
                              "/" + v.frame_id + ": value " + feature_names(v.kind)[i] +
                              " out of range");
        }
    }
}

ImageBuffer::ImageBuffer(int w, int h, int c, std::uint8_t fill)
    : width(w), height(h), channels(c) {
    if (w <= 0 || h <= 0) throw ShapeError("image: non-positive dimensions");
    if (c != 1 && c != 3) throw ShapeError("image: channels must be 1 or 3");
    pixels.assign(static_cast<std::size_t>(w) * h * c, fill);
}

void validate(const ImageBuffer& img) {
    if (img.width <= 0 || img.height <= 0) throw ShapeError("image: non-positive dimensions");
    if (img.channels != 1 && img.channels != 3) throw ShapeError("image: channels must be 1 or 3");
    const auto want = static_cast<std::size_t>(img.width) * img.height * img.channels;
    if (img.pixels.size() != want) {
        throw ShapeError("image: expected " + std::to_string(want) + " samples, got " +
                         std::to_string(img.pixels.size()));
    }
}

bool is_palsy_subject(const SubjectCensus& s) {
    if (s.source == Source::PalsyVideo) return true;
    if (s.source == Source::HealthyCorpus) return false;
    for (const auto& [key, count] : s.census) {
        if (key != 0 && count > 0) return true;
    }
    return false;
}

DatasetManifest build_manifest(std::span<const LandmarkFrame> frames) {
    DatasetManifest m;
    std::unordered_map<std::string, std::size_t> index;
    for (const auto& f : frames) {
        auto [it, inserted] = index.emplace(f.subject_id, m.subjects.size());
        if (inserted) m.subjects.push_back(SubjectCensus{f.subject_id, f.source, 0, {}});
        auto& s = m.subjects[it->second];
        ++s.frame_count;
        ++s.census[f.effective_label().class_key()];
    }
    return m;
}

void validate(const DatasetManifest& m) {
    for (const auto& s : m.subjects) {
        if (s.frame_count == 0) throw SchemaError("manifest: subject " + s.subject_id + " has no frames");
        std::size_t total = 0;
        for (const auto& [key, count] : s.census) total += count;
        if (total != s.frame_count) {
            throw SchemaError("manifest: census of subject " + s.subject_id +
                              " does not sum to its frame count");
        }
    }
}

}  // namespace palsyfuse

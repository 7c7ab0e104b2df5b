#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "palsyfuse/datamodel.hpp"

namespace palsyfuse::synth {

enum class Side { Left, Right };

// Per-frame face parameters. `seed` fixes the subject's identity (face
// proportions, pose, natural asymmetry); the phase selects the frame within
// the talking animation.
struct SynthFaceParams {
    std::uint64_t seed = 0;
    Side droop_side = Side::Left;
    double mouth_droop = 0.0;       // [0,1]
    double eye_closure_asym = 0.0;  // [0,1]
    double brow_drop = 0.0;         // [0,1]
    double expression_phase = 0.0;  // [0,1)
    double jitter_sigma = 0.0;      // landmark noise, units of interocular distance

    friend bool operator==(const SynthFaceParams&, const SynthFaceParams&) = default;
};

void validate(const SynthFaceParams& p);

struct SynthSubjectSpec {
    std::string subject_id;
    bool is_palsy = false;
    double severity = 0.0;  // [0,1]; 0 when !is_palsy
    std::size_t frame_count = 1;
    std::uint64_t seed = 0;
    double jitter_sigma = 0.01;
    // Affected side; drawn from the seed when unset.
    std::optional<Side> droop_side;
};

void validate(const SynthSubjectSpec& s);

// Region intensity for an effective severity: < 1/3 Normal, < 2/3 Slight,
// otherwise Strong.
Intensity intensity_for(double severity);

// Canonical mirror-symmetric neutral face (no identity variation, no pose).
const std::vector<Point2>& neutral_template();

std::vector<Point2> synthesize_landmarks(const SynthFaceParams& p);
std::vector<double> synthesize_blendshapes(const SynthFaceParams& p);

// Shaded RGB sketch of the face described by `p`.
ImageBuffer render_synthetic_rgb(const SynthFaceParams& p, int width, int height);

struct SynthFrameSpec {
    SynthFaceParams params;
    RegionLabel label;
};

// Per-frame parameters and labels of a subject; generate_subject turns
// these into frames.
std::vector<SynthFrameSpec> subject_frames(const SynthSubjectSpec& spec);
std::vector<LandmarkFrame> generate_subject(const SynthSubjectSpec& spec);

struct CohortSpec {
    std::size_t palsy_subjects = 10;
    std::size_t healthy_subjects = 40;
    std::size_t frames_per_subject = 50;
    double min_severity = 0.5;
    double max_severity = 1.0;
    double jitter_sigma = 0.01;
    std::uint64_t seed = 42;
};

// Palsy subjects first ("palsy-000", ...), then healthy ("healthy-000", ...).
// Palsy sides alternate left, right, left, ...
std::vector<SynthSubjectSpec> make_cohort(const CohortSpec& c);
std::vector<LandmarkFrame> generate_cohort(const CohortSpec& c);

}  // namespace palsyfuse::synth

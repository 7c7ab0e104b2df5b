#include "palsyfuse/synthgen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "palsyfuse/error.hpp"
#include "palsyfuse/rasterizer.hpp"
#include "palsyfuse/rng.hpp"

namespace palsyfuse::synth {

namespace {

constexpr double kPi = std::numbers::pi;

// Full-severity palsy: fraction of eye opening lost, and mouth-corner drop
// in units of the nominal interocular distance.
constexpr double kEyeClosure = 0.85;
constexpr double kMouthDroop = 0.45;

// Index lists follow the face-mesh topology used by the default contour set.
constexpr std::array<std::size_t, 36> kOval = {10,  338, 297, 332, 284, 251, 389, 356, 454,
                                               323, 361, 288, 397, 365, 379, 378, 400, 377,
                                               152, 148, 176, 149, 150, 136, 172, 58,  132,
                                               93,  234, 127, 162, 21,  54,  103, 67,  109};
constexpr std::array<std::size_t, 16> kEyeR = {33,  7,   163, 144, 145, 153, 154, 155,
                                               133, 173, 157, 158, 159, 160, 161, 246};
constexpr std::array<std::size_t, 16> kEyeL = {263, 249, 390, 373, 374, 380, 381, 382,
                                               362, 398, 384, 385, 386, 387, 388, 466};
// Upper row outer->inner, then lower row outer->inner.
constexpr std::array<std::size_t, 5> kBrowUpperR = {70, 63, 105, 66, 107};
constexpr std::array<std::size_t, 5> kBrowLowerR = {46, 53, 52, 65, 55};
constexpr std::array<std::size_t, 5> kBrowUpperL = {300, 293, 334, 296, 336};
constexpr std::array<std::size_t, 5> kBrowLowerL = {276, 283, 282, 295, 285};
constexpr std::array<std::size_t, 20> kLipsOuter = {61,  146, 91,  181, 84,  17,  314,
                                                    405, 321, 375, 291, 409, 270, 269,
                                                    267, 0,   37,  39,  40,  185};
constexpr std::array<std::size_t, 20> kLipsInner = {78,  95,  88,  178, 87,  14,  317,
                                                    402, 318, 324, 308, 415, 310, 311,
                                                    312, 13,  82,  81,  80,  191};
constexpr std::size_t kNoseTip = 1;

// Proportions of a face in normalized image coordinates.
struct FaceShape {
    double cx = 0.5;
    double cy = 0.5;
    double face_a = 0.30;
    double face_b = 0.40;
    double eye_dx = 0.11;
    double eye_dy = -0.08;
    double eye_rx = 0.055;
    double eye_ry = 0.022;
    double mouth_dy = 0.22;
    double mouth_w = 0.085;
    double nose_dy = 0.10;
};

// Animation state of one frame; everything symmetric lives here.
struct Expression {
    double mouth_open = 0.0;  // lip gap in normalized units
    double smile = 0.0;       // [0,1]
    double blink = 0.0;       // [0,1], 1 = closed
    double brow_raise = 0.0;  // [0,1]
};

// Subject-specific deviations applied to the subject's left side.
struct NaturalAsymmetry {
    double eye_dx = 0.0, eye_dy = 0.0, eye_ry_scale = 1.0;
    double brow_dy = 0.0;
    double mouth_dy = 0.0;
};

struct Palsy {
    double side = 1.0;  // +1: subject's left (+x in the image), -1: right
    double mouth = 0.0;
    double eye = 0.0;
    double brow = 0.0;
};

// Filler slots: every index not used by a named contour, paired into
// mirrored (left, right) positions with one point on the midline.
struct FillerLayout {
    std::vector<std::size_t> midline;
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (left index, right index)
    std::vector<Point2> midline_pos;                         // relative to face center
    std::vector<Point2> pair_pos;                            // left member, relative to center
};

const FillerLayout& filler_layout() {
    static const FillerLayout layout = [] {
        std::array<bool, kLandmarkCount> used{};
        auto mark = [&](auto const& list) {
            for (auto i : list) used[i] = true;
        };
        mark(kOval);
        mark(kEyeR);
        mark(kEyeL);
        mark(kBrowUpperR);
        mark(kBrowLowerR);
        mark(kBrowUpperL);
        mark(kBrowLowerL);
        mark(kLipsOuter);
        mark(kLipsInner);
        used[kNoseTip] = true;
        std::vector<std::size_t> free;
        for (std::size_t i = 0; i < kLandmarkCount; ++i) {
            if (!used[i]) free.push_back(i);
        }
        FillerLayout f;
        // Candidate offsets (dx > 0) on a grid inside a shrunken oval.
        std::vector<Point2> candidates;
        const double step = 0.021;
        for (int r = -17; r <= 17; ++r) {
            for (int c = 1; c <= 13; ++c) {
                const double dx = c * step, dy = r * step;
                const double e = (dx * dx) / (0.27 * 0.27) + (dy * dy) / (0.36 * 0.36);
                if (e < 1.0) candidates.push_back({dx, dy});
            }
        }
        const bool odd = free.size() % 2 == 1;
        const std::size_t pair_count = free.size() / 2;
        std::size_t k = 0;
        if (odd) {
            f.midline.push_back(free[k++]);
            f.midline_pos.push_back({0.0, 0.03});
        }
        for (std::size_t p = 0; p < pair_count; ++p) {
            f.pairs.emplace_back(free[k], free[k + 1]);
            k += 2;
            f.pair_pos.push_back(candidates[p * candidates.size() / pair_count]);
        }
        return f;
    }();
    return layout;
}

// Builds all 478 landmarks before pose and noise.
std::vector<Point2> build_face(const FaceShape& s, const Expression& e, const NaturalAsymmetry& n,
                               const Palsy& palsy) {
    std::vector<Point2> pts(kLandmarkCount);
    const double nominal_d = 2.0 * s.eye_dx;

    // Side weight of the palsy for a point on side `sign` (+1 left, -1 right).
    auto affected = [&](double sign) { return sign == palsy.side ? 1.0 : 0.0; };

    // Face oval; the lower quadrant of the affected side sags slightly.
    for (std::size_t k = 0; k < kOval.size(); ++k) {
        const double t = 2.0 * kPi * static_cast<double>(k) / kOval.size();
        double x = s.cx + s.face_a * std::sin(t);
        double y = s.cy - s.face_b * std::cos(t);
        const double side_w = std::max(0.0, palsy.side * std::sin(t)) * std::max(0.0, -std::cos(t));
        y += palsy.mouth * 0.02 * side_w;
        pts[kOval[k]] = {x, y};
    }

    // Eyes.
    auto place_eye = [&](const std::array<std::size_t, 16>& idx, double sign) {
        const bool left = sign > 0;
        const double ex = s.cx + sign * s.eye_dx + (left ? n.eye_dx : 0.0);
        const double ey = s.cy + s.eye_dy + (left ? n.eye_dy : 0.0);
        double open = (1.0 - e.blink) * (1.0 - kEyeClosure * palsy.eye * affected(sign));
        open = 0.1 + 0.9 * open;
        const double ry = s.eye_ry * (left ? n.eye_ry_scale : 1.0) * open;
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const double phi = kPi * static_cast<double>(k) / 8.0;
            // k = 0 outer corner, 4 bottom, 8 inner corner, 12 top.
            pts[idx[k]] = {ex + sign * s.eye_rx * std::cos(phi), ey + ry * std::sin(phi)};
        }
    };
    place_eye(kEyeL, 1.0);
    place_eye(kEyeR, -1.0);

    // Eyebrows.
    auto place_brow = [&](const std::array<std::size_t, 5>& upper, const std::array<std::size_t, 5>& lower,
                          double sign) {
        const bool left = sign > 0;
        const double ex = s.cx + sign * s.eye_dx;
        const double drop = palsy.brow * affected(sign);
        const double base = s.cy + s.eye_dy - 0.055 - 0.010 * e.brow_raise * (1.0 - drop) +
                            0.15 * nominal_d * drop + (left ? n.brow_dy : 0.0);
        for (std::size_t j = 0; j < 5; ++j) {
            const double t = static_cast<double>(j) / 4.0;  // 0 outer, 1 inner
            const double x = ex + sign * (0.072 - 0.117 * t);
            const double arch = 0.012 * std::sin(kPi * (0.2 + 0.8 * t));
            pts[upper[j]] = {x, base - arch};
            pts[lower[j]] = {x, base - arch + 0.012};
        }
    };
    place_brow(kBrowUpperL, kBrowLowerL, 1.0);
    place_brow(kBrowUpperR, kBrowLowerR, -1.0);

    // Mouth. Corners lift with a smile; the affected corner droops and does
    // not follow the smile.
    const double mx = s.cx;
    const double my = s.cy + s.mouth_dy;
    const double w = s.mouth_w * (1.0 + 0.1 * e.smile);
    auto corner_dy = [&](double sign) {
        const double a = affected(sign) * palsy.mouth;
        return -0.012 * e.smile * (1.0 - a) + kMouthDroop * nominal_d * a + (sign > 0 ? n.mouth_dy : 0.0);
    };
    const double dy_left = corner_dy(1.0);
    const double dy_right = corner_dy(-1.0);
    auto place_lips = [&](const std::array<std::size_t, 20>& idx, double half_w, double h_bottom,
                          double h_top) {
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const double psi = kPi * static_cast<double>(k) / 10.0;
            // k = 0 right corner, 5 bottom mid, 10 left corner, 15 top mid.
            const double x = mx - half_w * std::cos(psi);
            const double sn = std::sin(psi);
            double y = my + (sn >= 0.0 ? h_bottom : h_top) * sn;
            const double lateral = (x - mx) / half_w;
            const double wl = std::max(0.0, lateral), wr = std::max(0.0, -lateral);
            y += wl * wl * dy_left + wr * wr * dy_right;
            pts[idx[k]] = {x, y};
        }
    };
    place_lips(kLipsOuter, w, 0.030 + e.mouth_open / 2.0, 0.026 + e.mouth_open / 2.0);
    place_lips(kLipsInner, 0.8 * w, 0.003 + e.mouth_open / 2.0, 0.003 + e.mouth_open / 2.0);

    pts[kNoseTip] = {s.cx - palsy.side * palsy.mouth * 0.008, s.cy + s.nose_dy};

    // Filler points follow a smooth field around the affected mouth corner.
    const auto& f = filler_layout();
    const double corner_x = mx + palsy.side * w;
    const double droop_dy = kMouthDroop * nominal_d * palsy.mouth;
    auto field = [&](Point2 p) {
        const double dx = p.x - corner_x, dy = p.y - my;
        const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * 0.08 * 0.08));
        return Point2{p.x, p.y + 0.6 * droop_dy * g};
    };
    const double sx = s.face_a / 0.30, sy = s.face_b / 0.40;
    for (std::size_t k = 0; k < f.midline.size(); ++k) {
        const Point2 rel = f.midline_pos[k];
        pts[f.midline[k]] = field({s.cx + rel.x * sx, s.cy + rel.y * sy});
    }
    for (std::size_t k = 0; k < f.pairs.size(); ++k) {
        const Point2 rel = f.pair_pos[k];
        pts[f.pairs[k].first] = field({s.cx + rel.x * sx, s.cy + rel.y * sy});
        pts[f.pairs[k].second] = field({s.cx - rel.x * sx, s.cy + rel.y * sy});
    }
    return pts;
}

Expression expression_at(double phase) {
    Expression e;
    const double talk = 0.5 + 0.5 * std::sin(2.0 * kPi * 7.0 * phase);
    e.mouth_open = 0.045 * talk * talk;
    e.smile = 0.5 + 0.5 * std::sin(2.0 * kPi * 2.0 * phase + 1.0);
    const double blink_t = 6.0 * phase - std::floor(6.0 * phase);
    e.blink = blink_t < 0.06 ? 1.0 - std::abs(blink_t - 0.03) / 0.03 * 0.5 : 0.0;
    e.brow_raise = 0.5 + 0.5 * std::sin(2.0 * kPi * 3.0 * phase + 2.0);
    return e;
}

struct Identity {
    FaceShape shape;
    NaturalAsymmetry asym;
    double roll_deg = 0.0;
    double scale = 1.0;
    double tx = 0.0, ty = 0.0;
};

Identity identity_for(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "identity"));
    Identity id;
    id.shape.face_a *= rng.uniform(0.97, 1.03);
    id.shape.face_b *= rng.uniform(0.97, 1.03);
    id.shape.eye_dx *= rng.uniform(0.97, 1.03);
    id.shape.eye_rx *= rng.uniform(0.95, 1.05);
    id.shape.eye_ry *= rng.uniform(0.93, 1.07);
    id.shape.mouth_w *= rng.uniform(0.95, 1.05);
    id.shape.mouth_dy *= rng.uniform(0.95, 1.05);
    id.asym.eye_dx = rng.uniform(-0.002, 0.002);
    id.asym.eye_dy = rng.uniform(-0.002, 0.002);
    id.asym.eye_ry_scale = rng.uniform(0.95, 1.05);
    id.asym.brow_dy = rng.uniform(-0.003, 0.003);
    id.asym.mouth_dy = rng.uniform(-0.003, 0.003);
    id.roll_deg = rng.uniform(-2.0, 2.0);
    id.scale = rng.uniform(0.97, 1.03);
    id.tx = rng.uniform(-0.01, 0.01);
    id.ty = rng.uniform(-0.01, 0.01);
    return id;
}

Rng frame_rng(const SynthFaceParams& p) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "frame/%.17g", p.expression_phase);
    return Rng(derive_seed(p.seed, buf));
}

Palsy palsy_for(const SynthFaceParams& p) {
    return {p.droop_side == Side::Left ? 1.0 : -1.0, p.mouth_droop, p.eye_closure_asym, p.brow_drop};
}

}  // namespace

void validate(const SynthFaceParams& p) {
    auto unit = [](double v, const char* name) {
        if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string("synth params: ") + name + " must be in [0,1]");
    };
    unit(p.mouth_droop, "mouth_droop");
    unit(p.eye_closure_asym, "eye_closure_asym");
    unit(p.brow_drop, "brow_drop");
    if (!(p.expression_phase >= 0.0 && p.expression_phase < 1.0)) {
        throw ConfigError("synth params: expression_phase must be in [0,1)");
    }
    if (!(p.jitter_sigma >= 0.0) || !std::isfinite(p.jitter_sigma)) {
        throw ConfigError("synth params: jitter_sigma must be >= 0");
    }
}

void validate(const SynthSubjectSpec& s) {
    if (s.frame_count == 0) throw ConfigError("subject " + s.subject_id + ": frame_count must be positive");
    if (!(s.severity >= 0.0 && s.severity <= 1.0)) {
        throw ConfigError("subject " + s.subject_id + ": severity must be in [0,1]");
    }
    if (!s.is_palsy && s.severity != 0.0) {
        throw ConfigError("subject " + s.subject_id + ": healthy subjects must have severity 0");
    }
    if (!(s.jitter_sigma >= 0.0)) throw ConfigError("subject " + s.subject_id + ": jitter_sigma must be >= 0");
}

Intensity intensity_for(double severity) {
    if (severity < 1.0 / 3.0) return Intensity::Normal;
    if (severity < 2.0 / 3.0) return Intensity::Slight;
    return Intensity::Strong;
}

const std::vector<Point2>& neutral_template() {
    static const std::vector<Point2> pts = build_face(FaceShape{}, Expression{}, NaturalAsymmetry{}, Palsy{});
    return pts;
}

std::vector<Point2> synthesize_landmarks(const SynthFaceParams& p) {
    validate(p);
    const Identity id = identity_for(p.seed);
    Rng rng = frame_rng(p);
    auto pts = build_face(id.shape, expression_at(p.expression_phase), id.asym, palsy_for(p));

    const double roll = (id.roll_deg + rng.uniform(-1.0, 1.0)) * kPi / 180.0;
    const double scale = id.scale;
    const double tx = id.tx + rng.uniform(-0.005, 0.005);
    const double ty = id.ty + rng.uniform(-0.005, 0.005);
    const double c = std::cos(roll), s = std::sin(roll);
    const double sigma = p.jitter_sigma * 2.0 * id.shape.eye_dx * scale;
    for (auto& q : pts) {
        const double dx = q.x - 0.5, dy = q.y - 0.5;
        q.x = 0.5 + tx + scale * (c * dx - s * dy);
        q.y = 0.5 + ty + scale * (s * dx + c * dy);
        if (sigma > 0.0) {
            q.x += sigma * rng.normal();
            q.y += sigma * rng.normal();
        }
    }
    return pts;
}

std::vector<double> synthesize_blendshapes(const SynthFaceParams& p) {
    validate(p);
    const Expression e = expression_at(p.expression_phase);
    const Palsy palsy = palsy_for(p);
    Rng rng(derive_seed(frame_rng(p).next(), "blendshapes"));
    std::vector<double> b(kBlendshapeCount);
    for (auto& v : b) v = rng.uniform(0.0, 0.03);

    const double left_hit = palsy.side > 0 ? 1.0 : 0.0;
    const double right_hit = 1.0 - left_hit;
    const double open_l = (1.0 - e.blink) * (1.0 - kEyeClosure * palsy.eye * left_hit);
    const double open_r = (1.0 - e.blink) * (1.0 - kEyeClosure * palsy.eye * right_hit);
    auto add = [&](std::size_t i, double v) { b[i] = std::clamp(b[i] + v, 0.0, 1.0); };

    add(1, 0.8 * palsy.brow * left_hit);                          // browDownLeft
    add(2, 0.8 * palsy.brow * right_hit);                         // browDownRight
    add(3, 0.5 * e.brow_raise);                                   // browInnerUp
    add(4, 0.4 * e.brow_raise * (1.0 - palsy.brow * left_hit));   // browOuterUpLeft
    add(5, 0.4 * e.brow_raise * (1.0 - palsy.brow * right_hit));  // browOuterUpRight
    add(7, 0.2 * e.smile);                                        // cheekSquintLeft
    add(8, 0.2 * e.smile);                                        // cheekSquintRight
    add(9, 1.0 - open_l);                                         // eyeBlinkLeft
    add(10, 1.0 - open_r);                                        // eyeBlinkRight
    add(19, 0.3 * e.smile);                                       // eyeSquintLeft
    add(20, 0.3 * e.smile);                                       // eyeSquintRight
    add(25, e.mouth_open / 0.05);                                 // jawOpen
    add(30, 0.7 * palsy.mouth * left_hit);                        // mouthFrownLeft
    add(31, 0.7 * palsy.mouth * right_hit);                       // mouthFrownRight
    add(34, 0.5 * e.mouth_open / 0.05);                           // mouthLowerDownLeft
    add(35, 0.5 * e.mouth_open / 0.05);                           // mouthLowerDownRight
    add(44, 0.8 * e.smile * (1.0 - palsy.mouth * left_hit));      // mouthSmileLeft
    add(45, 0.8 * e.smile * (1.0 - palsy.mouth * right_hit));     // mouthSmileRight
    return b;
}

ImageBuffer render_synthetic_rgb(const SynthFaceParams& p, int width, int height) {
    return raster::render_face_sketch(synthesize_landmarks(p), raster::default_contours(), width, height);
}

std::vector<SynthFrameSpec> subject_frames(const SynthSubjectSpec& spec) {
    validate(spec);
    Rng rng(derive_seed(spec.seed, "subject"));
    const bool left = rng.bernoulli(0.5);
    const Side side = spec.droop_side.value_or(left ? Side::Left : Side::Right);
    const double offset = rng.uniform();
    std::vector<SynthFrameSpec> out;
    out.reserve(spec.frame_count);
    for (std::size_t i = 0; i < spec.frame_count; ++i) {
        SynthFrameSpec f;
        f.params.seed = spec.seed;
        f.params.droop_side = side;
        f.params.jitter_sigma = spec.jitter_sigma;
        double phase = offset + static_cast<double>(i) / static_cast<double>(spec.frame_count);
        phase -= std::floor(phase);
        f.params.expression_phase = phase;
        if (spec.is_palsy) {
            const double eye = std::clamp(spec.severity + rng.uniform(-0.25, 0.25), 0.0, 1.0);
            const double mouth = std::clamp(spec.severity + rng.uniform(-0.25, 0.25), 0.0, 1.0);
            f.params.eye_closure_asym = eye;
            f.params.brow_drop = eye;
            f.params.mouth_droop = mouth;
            f.label = {intensity_for(eye), intensity_for(mouth)};
        }
        out.push_back(f);
    }
    return out;
}

std::vector<LandmarkFrame> generate_subject(const SynthSubjectSpec& spec) {
    std::vector<LandmarkFrame> frames;
    std::size_t i = 0;
    for (const auto& f : subject_frames(spec)) {
        LandmarkFrame frame;
        frame.subject_id = spec.subject_id;
        char id[16];
        std::snprintf(id, sizeof id, "f%04zu", i++);
        frame.frame_id = id;
        frame.source = Source::Synthetic;
        frame.landmarks = synthesize_landmarks(f.params);
        frame.blendshapes = synthesize_blendshapes(f.params);
        frame.label = f.label;
        frames.push_back(std::move(frame));
    }
    return frames;
}

std::vector<SynthSubjectSpec> make_cohort(const CohortSpec& c) {
    if (c.frames_per_subject == 0) throw ConfigError("cohort: frames per subject must be positive");
    if (!(c.min_severity >= 0.0 && c.min_severity <= c.max_severity && c.max_severity <= 1.0)) {
        throw ConfigError("cohort: severity range must satisfy 0 <= min <= max <= 1");
    }
    Rng rng(derive_seed(c.seed, "cohort"));
    std::vector<SynthSubjectSpec> out;
    char id[32];
    for (std::size_t i = 0; i < c.palsy_subjects; ++i) {
        std::snprintf(id, sizeof id, "palsy-%03zu", i);
        out.push_back({id, true, rng.uniform(c.min_severity, c.max_severity), c.frames_per_subject,
                       derive_seed(c.seed, id), c.jitter_sigma, i % 2 == 0 ? Side::Left : Side::Right});
    }
    for (std::size_t i = 0; i < c.healthy_subjects; ++i) {
        std::snprintf(id, sizeof id, "healthy-%03zu", i);
        out.push_back({id, false, 0.0, c.frames_per_subject, derive_seed(c.seed, id), c.jitter_sigma, std::nullopt});
    }
    return out;
}

std::vector<LandmarkFrame> generate_cohort(const CohortSpec& c) {
    std::vector<LandmarkFrame> frames;
    for (const auto& s : make_cohort(c)) {
        auto f = generate_subject(s);
        frames.insert(frames.end(), std::make_move_iterator(f.begin()), std::make_move_iterator(f.end()));
    }
    return frames;
}

}  // namespace palsyfuse::synth

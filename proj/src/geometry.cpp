#include "palsyfuse/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numbers>
#include <set>

#include "palsyfuse/error.hpp"
#include "palsyfuse/io.hpp"

namespace palsyfuse::geometry {

namespace {

constexpr std::array<std::string_view, kRoleCount> kRoleNames = {
    "forehead_mid",    "chin",            "nose_tip",       "upper_lip_mid",  "lower_lip_mid",
    "eyebrow_inner_L", "eyebrow_inner_R", "eyebrow_mid_L",  "eyebrow_mid_R",  "eyebrow_outer_L",
    "eyebrow_outer_R", "eye_inner_L",     "eye_inner_R",    "eye_outer_L",    "eye_outer_R",
    "eye_top_L",       "eye_top_R",       "eye_bottom_L",   "eye_bottom_R",   "mouth_corner_L",
    "mouth_corner_R"};

Vec2 sub(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
double norm(Vec2 a) { return std::hypot(a.x, a.y); }
double dist(Point2 a, Point2 b) { return norm(sub(a, b)); }
Point2 midpoint(Point2 a, Point2 b) { return {(a.x + b.x) / 2.0, (a.y + b.y) / 2.0}; }

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

double ratio(double x, double y) {
    const double hi = std::max(x, y);
    if (hi < 1e-12) return 1.0;
    return std::min(x, y) / hi;
}

constexpr double kDeg = 180.0 / std::numbers::pi;

}  // namespace

std::string_view role_name(Role r) { return kRoleNames[static_cast<std::size_t>(r)]; }

const std::array<std::pair<Role, Role>, 8>& bilateral_pairs() {
    static const std::array<std::pair<Role, Role>, 8> pairs = {{
        {Role::EyebrowInnerL, Role::EyebrowInnerR},
        {Role::EyebrowMidL, Role::EyebrowMidR},
        {Role::EyebrowOuterL, Role::EyebrowOuterR},
        {Role::EyeInnerL, Role::EyeInnerR},
        {Role::EyeOuterL, Role::EyeOuterR},
        {Role::EyeTopL, Role::EyeTopR},
        {Role::EyeBottomL, Role::EyeBottomR},
        {Role::MouthCornerL, Role::MouthCornerR},
    }};
    return pairs;
}

RoleMap::RoleMap(const std::array<std::size_t, kRoleCount>& indices) : indices_(indices) {
    std::set<std::size_t> seen;
    for (std::size_t i = 0; i < kRoleCount; ++i) {
        if (indices_[i] >= kLandmarkCount) {
            throw SchemaError("roles: index of " + std::string(kRoleNames[i]) + " out of range");
        }
        if (!seen.insert(indices_[i]).second) {
            throw SchemaError("roles: index of " + std::string(kRoleNames[i]) + " is not distinct");
        }
    }
}

RoleMap RoleMap::swapped_sides() const {
    RoleMap out = *this;
    for (auto [l, r] : bilateral_pairs()) {
        std::swap(out.indices_[static_cast<std::size_t>(l)], out.indices_[static_cast<std::size_t>(r)]);
    }
    return out;
}

RoleMap RoleMap::from_json(std::string_view text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("roles: ") + e.what());
    }
    if (!j.is_object()) throw SchemaError("roles: expected an object {role: index}");
    std::array<std::size_t, kRoleCount> idx{};
    for (std::size_t i = 0; i < kRoleCount; ++i) {
        auto it = j.find(std::string(kRoleNames[i]));
        if (it == j.end()) throw SchemaError("roles: missing role " + std::string(kRoleNames[i]));
        if (!it->is_number_integer() || it->get<long long>() < 0) {
            throw SchemaError("roles: index of " + std::string(kRoleNames[i]) + " must be a non-negative integer");
        }
        idx[i] = it->get<std::size_t>();
    }
    for (const auto& [key, value] : j.items()) {
        if (std::find(kRoleNames.begin(), kRoleNames.end(), key) == kRoleNames.end()) {
            throw SchemaError("roles: unknown role " + key);
        }
    }
    return RoleMap(idx);
}

RoleMap RoleMap::load(const std::filesystem::path& path) { return from_json(io::read_file(path)); }

std::string RoleMap::to_json() const {
    nlohmann::ordered_json j;
    for (std::size_t i = 0; i < kRoleCount; ++i) j[std::string(kRoleNames[i])] = indices_[i];
    return j.dump(2) + "\n";
}

const RoleMap& default_role_map() {
    static const RoleMap m({
        10,   // forehead_mid
        152,  // chin
        1,    // nose_tip
        13,   // upper_lip_mid
        14,   // lower_lip_mid
        336,  // eyebrow_inner_L
        107,  // eyebrow_inner_R
        334,  // eyebrow_mid_L
        105,  // eyebrow_mid_R
        300,  // eyebrow_outer_L
        70,   // eyebrow_outer_R
        362,  // eye_inner_L
        133,  // eye_inner_R
        263,  // eye_outer_L
        33,   // eye_outer_R
        386,  // eye_top_L
        159,  // eye_top_R
        374,  // eye_bottom_L
        145,  // eye_bottom_R
        291,  // mouth_corner_L
        61,   // mouth_corner_R
    });
    return m;
}

MidlineModel build_midline(std::span<const Point2> pts, const RoleMap& roles) {
    if (pts.size() != kLandmarkCount) {
        throw SchemaError("landmarks: expected 478, got " + std::to_string(pts.size()));
    }
    auto at = [&](Role r) { return pts[roles[r]]; };
    MidlineModel m;
    m.origin = at(Role::ForeheadMid);
    const Vec2 axis = sub(at(Role::Chin), m.origin);
    const double len = norm(axis);
    if (!(len > 1e-12)) throw GeometryError("degenerate midline: forehead_mid coincides with chin");
    m.u = {axis.x / len, axis.y / len};
    m.h = {m.u.y, -m.u.x};

    auto eye_center = [&](Role inner, Role outer, Role top, Role bottom) {
        const Point2 a = at(inner), b = at(outer), c = at(top), d = at(bottom);
        return Point2{(a.x + b.x + c.x + d.x) / 4.0, (a.y + b.y + c.y + d.y) / 4.0};
    };
    m.eye_center_left = eye_center(Role::EyeInnerL, Role::EyeOuterL, Role::EyeTopL, Role::EyeBottomL);
    m.eye_center_right = eye_center(Role::EyeInnerR, Role::EyeOuterR, Role::EyeTopR, Role::EyeBottomR);
    m.scale = dist(m.eye_center_left, m.eye_center_right);
    if (!(m.scale >= 1e-9)) throw GeometryError("degenerate eye points: interocular distance below 1e-9");
    return m;
}

MidlineModel build_midline(const LandmarkFrame& frame, const RoleMap& roles) {
    return build_midline(frame.landmarks, roles);
}

Point2 mirror(const MidlineModel& m, Point2 p) {
    const double off = dot(sub(p, m.origin), m.h);
    return {p.x - 2.0 * off * m.h.x, p.y - 2.0 * off * m.h.y};
}

std::array<double, kHandcraftedCount> handcrafted_values(std::span<const Point2> pts,
                                                         const RoleMap& roles) {
    const MidlineModel m = build_midline(pts, roles);
    auto at = [&](Role r) { return pts[roles[r]]; };
    const double D = m.scale;

    // Signed inclination of a->b against h, in degrees, folded to (-90, 90].
    auto theta = [&](Point2 a, Point2 b) {
        const Vec2 v = sub(b, a);
        double deg = std::atan2(dot(v, m.u), dot(v, m.h)) * kDeg;
        if (deg > 90.0) deg -= 180.0;
        if (deg <= -90.0) deg += 180.0;
        return deg;
    };
    auto incline = [&](Point2 a, Point2 b) { return std::min(std::abs(theta(a, b)), 45.0) / 45.0; };
    // A mirrored segment has the negated inclination, so symmetric pairs
    // cancel in the sum.
    auto incline_asym = [&](double left, double right) { return std::min(std::abs(left + right), 45.0) / 45.0; };
    auto dml = [&](Point2 p) { return std::abs(dot(sub(p, m.origin), m.h)); };
    auto along_u = [&](Point2 a, Point2 b) { return std::abs(dot(sub(a, b), m.u)); };

    std::array<double, kHandcraftedCount> f{};

    // Eyebrow inclinations.
    const double brow_l = theta(at(Role::EyebrowInnerL), at(Role::EyebrowOuterL));
    const double brow_r = theta(at(Role::EyebrowInnerR), at(Role::EyebrowOuterR));
    f[0] = incline(at(Role::EyebrowInnerL), at(Role::EyebrowOuterL));
    f[1] = incline(at(Role::EyebrowInnerR), at(Role::EyebrowOuterR));
    f[2] = incline_asym(brow_l, brow_r);

    // Eye-axis inclinations.
    const double eye_l = theta(at(Role::EyeInnerL), at(Role::EyeOuterL));
    const double eye_r = theta(at(Role::EyeInnerR), at(Role::EyeOuterR));
    f[3] = incline(at(Role::EyeInnerL), at(Role::EyeOuterL));
    f[4] = incline(at(Role::EyeInnerR), at(Role::EyeOuterR));
    f[5] = incline_asym(eye_l, eye_r);

    // Mouth line and lip axis.
    f[6] = incline(at(Role::MouthCornerR), at(Role::MouthCornerL));
    {
        const Vec2 v = sub(at(Role::LowerLipMid), at(Role::UpperLipMid));
        const double deg = std::atan2(std::abs(dot(v, m.h)), std::abs(dot(v, m.u))) * kDeg;
        f[7] = std::min(deg, 45.0) / 45.0;
    }

    // Palpebral fissure heights.
    const double gap_l = dist(at(Role::EyeTopL), at(Role::EyeBottomL));
    const double gap_r = dist(at(Role::EyeTopR), at(Role::EyeBottomR));
    f[8] = clamp01(gap_l / D);
    f[9] = clamp01(gap_r / D);
    f[10] = ratio(f[8], f[9]);

    // Eye aspect ratios.
    auto aspect = [](double gap, double width) { return width < 1e-12 ? 0.0 : clamp01(gap / width); };
    f[11] = aspect(gap_l, dist(at(Role::EyeInnerL), at(Role::EyeOuterL)));
    f[12] = aspect(gap_r, dist(at(Role::EyeInnerR), at(Role::EyeOuterR)));
    f[13] = ratio(f[11], f[12]);

    // Brow-to-eye distances.
    f[14] = clamp01(dist(at(Role::EyebrowMidL), at(Role::EyeTopL)) / D);
    f[15] = clamp01(dist(at(Role::EyebrowMidR), at(Role::EyeTopR)) / D);
    f[16] = ratio(f[14], f[15]);

    // Mouth-corner distance to the midline.
    f[17] = clamp01(dml(at(Role::MouthCornerL)) / D);
    f[18] = clamp01(dml(at(Role::MouthCornerR)) / D);
    f[19] = ratio(f[17], f[18]);

    // Vertical mouth-corner displacement.
    const Point2 mouth_center = midpoint(at(Role::UpperLipMid), at(Role::LowerLipMid));
    f[20] = clamp01(along_u(at(Role::MouthCornerL), mouth_center) / (0.5 * D));
    f[21] = clamp01(along_u(at(Role::MouthCornerR), mouth_center) / (0.5 * D));
    f[22] = clamp01(along_u(at(Role::MouthCornerL), at(Role::MouthCornerR)) / (0.5 * D));

    // Mouth width and opening.
    f[23] = clamp01(dist(at(Role::MouthCornerL), at(Role::MouthCornerR)) / (2.0 * D));
    f[24] = clamp01(dist(at(Role::UpperLipMid), at(Role::LowerLipMid)) / D);

    // Midline deviations.
    f[25] = clamp01(dml(at(Role::NoseTip)) / (0.5 * D));
    f[26] = clamp01(dml(at(Role::UpperLipMid)) / (0.5 * D));
    f[27] = clamp01(dml(at(Role::LowerLipMid)) / (0.5 * D));

    double mirror_sum = 0.0;
    for (auto [l, r] : bilateral_pairs()) mirror_sum += dist(mirror(m, at(r)), at(l)) / D;
    f[28] = clamp01(mirror_sum / static_cast<double>(bilateral_pairs().size()));

    return f;
}

FeatureVector handcrafted29(const LandmarkFrame& frame, const RoleMap& roles) {
    const auto v = handcrafted_values(frame.landmarks, roles);
    return {FeatureKind::Handcrafted29, std::vector<double>(v.begin(), v.end()), frame.subject_id,
            frame.frame_id};
}

std::vector<double> flatten_values(std::span<const Point2> pts, const RoleMap& roles) {
    const MidlineModel m = build_midline(pts, roles);
    const Point2 center = midpoint(m.eye_center_left, m.eye_center_right);
    std::vector<double> out;
    out.reserve(kCoordinateCount);
    for (const auto& p : pts) {
        const Vec2 d = sub(p, center);
        out.push_back(dot(d, m.h) / m.scale);
        out.push_back(dot(d, m.u) / m.scale);
    }
    return out;
}

FeatureVector flatten_coordinates(const LandmarkFrame& frame, const RoleMap& roles) {
    return {FeatureKind::Coordinates956, flatten_values(frame.landmarks, roles), frame.subject_id,
            frame.frame_id};
}

FeatureVector expression_features(const LandmarkFrame& frame) {
    if (!frame.blendshapes) {
        throw ModalityUnavailable("frame " + frame.subject_id + "/" + frame.frame_id +
                                  ": expression features unavailable (no blendshapes)");
    }
    return {FeatureKind::Expression52, *frame.blendshapes, frame.subject_id, frame.frame_id};
}

}  // namespace palsyfuse::geometry

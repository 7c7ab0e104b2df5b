#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

#include "palsyfuse/datamodel.hpp"

namespace palsyfuse::geometry {

// Semantic landmark roles. Bilateral roles come in (L, R) pairs; L is the
// subject's left, which lies on the +h side of the midline.
enum class Role : std::size_t {
    ForeheadMid,
    Chin,
    NoseTip,
    UpperLipMid,
    LowerLipMid,
    EyebrowInnerL,
    EyebrowInnerR,
    EyebrowMidL,
    EyebrowMidR,
    EyebrowOuterL,
    EyebrowOuterR,
    EyeInnerL,
    EyeInnerR,
    EyeOuterL,
    EyeOuterR,
    EyeTopL,
    EyeTopR,
    EyeBottomL,
    EyeBottomR,
    MouthCornerL,
    MouthCornerR,
};

inline constexpr std::size_t kRoleCount = 21;

std::string_view role_name(Role r);

// The eight bilateral (left, right) role pairs.
const std::array<std::pair<Role, Role>, 8>& bilateral_pairs();

class RoleMap {
public:
    RoleMap() = default;
    explicit RoleMap(const std::array<std::size_t, kRoleCount>& indices);

    std::size_t operator[](Role r) const { return indices_[static_cast<std::size_t>(r)]; }
    const std::array<std::size_t, kRoleCount>& indices() const { return indices_; }

    // Exchanges every L role with its R counterpart.
    RoleMap swapped_sides() const;

    static RoleMap from_json(std::string_view text);
    static RoleMap load(const std::filesystem::path& path);
    std::string to_json() const;

    friend bool operator==(const RoleMap&, const RoleMap&) = default;

private:
    std::array<std::size_t, kRoleCount> indices_{};
};

// Role indices for the 478-point face-mesh topology; also shipped as
// config/roles.json.
const RoleMap& default_role_map();

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

struct MidlineModel {
    Point2 origin;       // forehead_mid
    Vec2 u;              // unit, toward chin
    Vec2 h;              // unit, perpendicular to u
    double scale = 0.0;  // interocular distance D
    Point2 eye_center_left;
    Point2 eye_center_right;
};

MidlineModel build_midline(std::span<const Point2> landmarks, const RoleMap& roles);
MidlineModel build_midline(const LandmarkFrame& frame, const RoleMap& roles);

// Reflects a point across the midline.
Point2 mirror(const MidlineModel& m, Point2 p);

// The 29 asymmetry features, each in [0, 1], in canonical order F1..F29.
std::array<double, kHandcraftedCount> handcrafted_values(std::span<const Point2> landmarks,
                                                         const RoleMap& roles);
FeatureVector handcrafted29(const LandmarkFrame& frame, const RoleMap& roles);

// Landmarks after rigid normalization (eye-center midpoint at the origin,
// midline axis along +y, unit interocular distance), flattened x0,y0,x1,...
std::vector<double> flatten_values(std::span<const Point2> landmarks, const RoleMap& roles);
FeatureVector flatten_coordinates(const LandmarkFrame& frame, const RoleMap& roles);

FeatureVector expression_features(const LandmarkFrame& frame);

}  // namespace palsyfuse::geometry

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "palsyfuse/datamodel.hpp"

namespace palsyfuse::raster {

struct Contour {
    std::string name;
    std::vector<std::size_t> indices;
    bool closed = false;

    friend bool operator==(const Contour&, const Contour&) = default;
};

// Named contours: face_oval, eyebrow_L/R, eye_L/R, lips_outer, lips_inner.
// Missing names are simply not drawn.
class ContourSet {
public:
    ContourSet() = default;
    explicit ContourSet(std::vector<Contour> contours);

    const std::vector<Contour>& contours() const { return contours_; }
    const Contour* find(std::string_view name) const;
    bool empty() const { return contours_.empty(); }

    static ContourSet from_json(std::string_view text);
    static ContourSet load(const std::filesystem::path& path);
    std::string to_json() const;

    friend bool operator==(const ContourSet&, const ContourSet&) = default;

private:
    std::vector<Contour> contours_;
};

// Contours of the 478-point face-mesh topology; also shipped as
// config/contours.json.
const ContourSet& default_contours();

struct PixelPoint {
    int col = 0;
    int row = 0;
    friend bool operator==(const PixelPoint&, const PixelPoint&) = default;
};

// Normalized [0,1] coordinate to pixel index: floor(v * size) clamped into
// the raster.
PixelPoint to_pixel(Point2 p, int width, int height);

// Integer Bresenham line, both endpoints included.
std::vector<PixelPoint> bresenham(PixelPoint a, PixelPoint b);

void draw_line(ImageBuffer& img, PixelPoint a, PixelPoint b, std::span<const std::uint8_t> color);

// Even-odd fill of a polygon given in normalized coordinates; a pixel is
// inside when its center is.
void fill_polygon(ImageBuffer& img, std::span<const Point2> polygon, std::span<const std::uint8_t> color);

// White 1-pixel contour polylines on a black background.
ImageBuffer render_line_segments(std::span<const Point2> landmarks, const ContourSet& contours,
                                 int width, int height);
ImageBuffer render_line_segments(const LandmarkFrame& frame, const ContourSet& contours,
                                 int width, int height);

// Shaded RGB sketch of a face: skin-filled oval, brow/eye/lip fills, darker
// contour strokes. Pure function of its inputs.
ImageBuffer render_face_sketch(std::span<const Point2> landmarks, const ContourSet& contours,
                               int width, int height);

}  // namespace palsyfuse::raster

#include "palsyfuse/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <json.hpp>

#include "palsyfuse/error.hpp"
#include "palsyfuse/io.hpp"

namespace palsyfuse::raster {

ContourSet::ContourSet(std::vector<Contour> contours) : contours_(std::move(contours)) {
    for (const auto& c : contours_) {
        if (c.indices.size() < 2) throw SchemaError("contour " + c.name + ": needs at least 2 points");
        for (auto i : c.indices) {
            if (i >= kLandmarkCount) {
                throw SchemaError("contour " + c.name + ": index " + std::to_string(i) + " out of range");
            }
        }
    }
}

const Contour* ContourSet::find(std::string_view name) const {
    for (const auto& c : contours_) {
        if (c.name == name) return &c;
    }
    return nullptr;
}

ContourSet ContourSet::from_json(std::string_view text) {
    std::vector<Contour> out;
    try {
        auto j = nlohmann::json::parse(text);
        for (const auto& c : j.at("contours")) {
            Contour contour;
            contour.name = c.at("name").get<std::string>();
            contour.closed = c.at("closed").get<bool>();
            for (const auto& i : c.at("indices")) {
                if (!i.is_number_integer() || i.get<long long>() < 0) {
                    throw SchemaError("contour " + contour.name + ": indices must be non-negative integers");
                }
                contour.indices.push_back(i.get<std::size_t>());
            }
            out.push_back(std::move(contour));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("contours: ") + e.what());
    }
    return ContourSet(std::move(out));
}

ContourSet ContourSet::load(const std::filesystem::path& path) { return from_json(io::read_file(path)); }

std::string ContourSet::to_json() const {
    nlohmann::ordered_json j;
    j["contours"] = nlohmann::ordered_json::array();
    for (const auto& c : contours_) {
        nlohmann::ordered_json e;
        e["name"] = c.name;
        e["closed"] = c.closed;
        e["indices"] = c.indices;
        j["contours"].push_back(e);
    }
    return j.dump(2) + "\n";
}

const ContourSet& default_contours() {
    static const ContourSet set({
        {"face_oval",
         {10, 338, 297, 332, 284, 251, 389, 356, 454, 323, 361, 288, 397, 365, 379, 378, 400, 377,
          152, 148, 176, 149, 150, 136, 172, 58, 132, 93, 234, 127, 162, 21, 54, 103, 67, 109},
         true},
        {"eyebrow_R", {70, 63, 105, 66, 107, 55, 65, 52, 53, 46}, true},
        {"eyebrow_L", {300, 293, 334, 296, 336, 285, 295, 282, 283, 276}, true},
        {"eye_R", {33, 7, 163, 144, 145, 153, 154, 155, 133, 173, 157, 158, 159, 160, 161, 246}, true},
        {"eye_L", {263, 249, 390, 373, 374, 380, 381, 382, 362, 398, 384, 385, 386, 387, 388, 466}, true},
        {"lips_outer",
         {61, 146, 91, 181, 84, 17, 314, 405, 321, 375, 291, 409, 270, 269, 267, 0, 37, 39, 40, 185},
         true},
        {"lips_inner",
         {78, 95, 88, 178, 87, 14, 317, 402, 318, 324, 308, 415, 310, 311, 312, 13, 82, 81, 80, 191},
         true},
    });
    return set;
}

PixelPoint to_pixel(Point2 p, int width, int height) {
    auto map = [](double v, int size) {
        const double s = std::floor(v * size);
        if (!(s >= 0.0)) return 0;
        if (s > size - 1) return size - 1;
        return static_cast<int>(s);
    };
    return {map(p.x, width), map(p.y, height)};
}

std::vector<PixelPoint> bresenham(PixelPoint a, PixelPoint b) {
    std::vector<PixelPoint> out;
    int x0 = a.col, y0 = a.row;
    const int dx = std::abs(b.col - x0), sx = x0 < b.col ? 1 : -1;
    const int dy = -std::abs(b.row - y0), sy = y0 < b.row ? 1 : -1;
    int err = dx + dy;
    while (true) {
        out.push_back({x0, y0});
        if (x0 == b.col && y0 == b.row) break;
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
    return out;
}

void draw_line(ImageBuffer& img, PixelPoint a, PixelPoint b, std::span<const std::uint8_t> color) {
    for (auto p : bresenham(a, b)) {
        if (p.col < 0 || p.row < 0 || p.col >= img.width || p.row >= img.height) continue;
        for (int c = 0; c < img.channels; ++c) img.at(p.row, p.col, c) = color[c];
    }
}

void fill_polygon(ImageBuffer& img, std::span<const Point2> poly, std::span<const std::uint8_t> color) {
    if (poly.size() < 3) return;
    std::vector<double> xs;
    for (int row = 0; row < img.height; ++row) {
        const double y = row + 0.5;
        xs.clear();
        for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
            const double yi = poly[i].y * img.height, yj = poly[j].y * img.height;
            if ((yi > y) != (yj > y)) {
                const double xi = poly[i].x * img.width, xj = poly[j].x * img.width;
                xs.push_back(xi + (y - yi) * (xj - xi) / (yj - yi));
            }
        }
        std::sort(xs.begin(), xs.end());
        for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
            // Pixel centers col + 0.5 strictly inside [xs[k], xs[k+1]).
            const int c0 = std::max(0, static_cast<int>(std::ceil(xs[k] - 0.5)));
            const int c1 = std::min(img.width - 1, static_cast<int>(std::ceil(xs[k + 1] - 0.5)) - 1);
            for (int col = c0; col <= c1; ++col) {
                for (int c = 0; c < img.channels; ++c) img.at(row, col, c) = color[c];
            }
        }
    }
}

namespace {

void check_size(int width, int height) {
    if (width < 16 || height < 16) throw ShapeError("render size must be at least 16x16");
}

void check_indices(const ContourSet& contours, std::size_t count) {
    for (const auto& c : contours.contours()) {
        for (auto i : c.indices) {
            if (i >= count) {
                throw SchemaError("contour " + c.name + ": index " + std::to_string(i) + " out of range");
            }
        }
    }
}

void stroke(ImageBuffer& img, std::span<const Point2> pts, const Contour& c,
            std::span<const std::uint8_t> color) {
    const std::size_t n = c.indices.size();
    const std::size_t segments = c.closed ? n : n - 1;
    for (std::size_t k = 0; k < segments; ++k) {
        const auto a = to_pixel(pts[c.indices[k]], img.width, img.height);
        const auto b = to_pixel(pts[c.indices[(k + 1) % n]], img.width, img.height);
        draw_line(img, a, b, color);
    }
}

std::vector<Point2> polygon_of(std::span<const Point2> pts, const Contour& c) {
    std::vector<Point2> poly;
    poly.reserve(c.indices.size());
    for (auto i : c.indices) poly.push_back(pts[i]);
    return poly;
}

}  // namespace

ImageBuffer render_line_segments(std::span<const Point2> pts, const ContourSet& contours, int width,
                                 int height) {
    check_size(width, height);
    check_indices(contours, pts.size());
    ImageBuffer img(width, height, 1, 0);
    const std::array<std::uint8_t, 1> white{255};
    for (const auto& c : contours.contours()) stroke(img, pts, c, white);
    return img;
}

ImageBuffer render_line_segments(const LandmarkFrame& frame, const ContourSet& contours, int width,
                                 int height) {
    return render_line_segments(frame.landmarks, contours, width, height);
}

ImageBuffer render_face_sketch(std::span<const Point2> pts, const ContourSet& contours, int width,
                               int height) {
    check_size(width, height);
    check_indices(contours, pts.size());
    using Rgb = std::array<std::uint8_t, 3>;
    const Rgb background{32, 44, 64};
    const Rgb skin{214, 170, 140};
    const Rgb skin_line{150, 100, 78};
    const Rgb brow{70, 46, 32};
    const Rgb sclera{238, 238, 232};
    const Rgb eye_line{40, 30, 30};
    const Rgb lip{176, 80, 86};
    const Rgb mouth{70, 16, 26};

    ImageBuffer img(width, height, 3);
    for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
        img.pixels[i] = background[0];
        img.pixels[i + 1] = background[1];
        img.pixels[i + 2] = background[2];
    }
    auto fill = [&](std::string_view name, const Rgb& color) {
        if (const auto* c = contours.find(name)) fill_polygon(img, polygon_of(pts, *c), color);
    };
    auto line = [&](std::string_view name, const Rgb& color) {
        if (const auto* c = contours.find(name)) stroke(img, pts, *c, color);
    };

    fill("face_oval", skin);
    line("face_oval", skin_line);
    fill("eyebrow_L", brow);
    fill("eyebrow_R", brow);
    line("eyebrow_L", brow);
    line("eyebrow_R", brow);
    fill("eye_L", sclera);
    fill("eye_R", sclera);
    line("eye_L", eye_line);
    line("eye_R", eye_line);
    fill("lips_outer", lip);
    fill("lips_inner", mouth);
    line("lips_outer", skin_line);
    return img;
}

}  // namespace palsyfuse::raster

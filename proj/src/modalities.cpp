#include "palsyfuse/modalities.hpp"

#include "palsyfuse/error.hpp"
#include "palsyfuse/io.hpp"

namespace palsyfuse::modalities {

using models::Modality;

namespace {

int checked_size(const ModalitySources& src) {
    if (src.image_size < 16 || src.image_size > 4096) {
        throw ConfigError("image size must be in [16, 4096], got " + std::to_string(src.image_size));
    }
    return static_cast<int>(src.image_size);
}

ImageBuffer load_from(const std::filesystem::path& dir, const LandmarkFrame& f, const char* ext, int channels,
                      int size) {
    const auto path = dir / f.subject_id / (f.frame_id + ext);
    ImageBuffer img = io::read_image(path);
    if (img.channels != channels || img.width != size || img.height != size) {
        throw ShapeError(path.string() + ": expected " + std::to_string(size) + "x" + std::to_string(size) + "x" +
                         std::to_string(channels) + " image, got " + std::to_string(img.width) + "x" +
                         std::to_string(img.height) + "x" + std::to_string(img.channels));
    }
    return img;
}

}  // namespace

ImageBuffer frame_image(const LandmarkFrame& frame, Modality m, const ModalitySources& src) {
    const int size = checked_size(src);
    if (m == Modality::RgbImage) {
        if (src.rgb_dir) return load_from(*src.rgb_dir, frame, ".ppm", 3, size);
        return raster::render_face_sketch(frame.landmarks, src.contours, size, size);
    }
    if (m == Modality::BnwImage) {
        if (src.bnw_dir) return load_from(*src.bnw_dir, frame, ".pgm", 1, size);
        return raster::render_line_segments(frame, src.contours, size, size);
    }
    throw ConfigError("modality " + models::to_string(m) + " is not an image modality");
}

void append_image(const ImageBuffer& img, std::vector<double>& out) {
    const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
    const std::size_t base = out.size();
    out.resize(base + plane * img.channels);
    for (std::size_t p = 0; p < plane; ++p) {
        for (int c = 0; c < img.channels; ++c) {
            out[base + c * plane + p] = img.pixels[p * img.channels + c] / 255.0;
        }
    }
}

nn::Shape sample_shape(Modality m, const ModalitySources& src) {
    switch (m) {
        case Modality::Handcrafted: return {kHandcraftedCount};
        case Modality::Expression: return {kBlendshapeCount};
        case Modality::Coordinates: return {kCoordinateCount};
        case Modality::RgbImage: return {3, src.image_size, src.image_size};
        case Modality::BnwImage: return {1, src.image_size, src.image_size};
        case Modality::Embedding: break;
    }
    throw ConfigError("embeddings are not a frame modality");
}

nn::Tensor build_inputs(Modality m, std::span<const LandmarkFrame* const> frames, const ModalitySources& src) {
    if (frames.empty()) throw ConfigError("build_inputs: no frames");
    nn::Shape shape = sample_shape(m, src);
    const std::size_t width = nn::shape_size(shape);
    std::vector<double> data;
    data.reserve(width * frames.size());
    for (const auto* f : frames) {
        switch (m) {
            case Modality::Handcrafted: {
                const auto v = geometry::handcrafted_values(f->landmarks, src.roles);
                data.insert(data.end(), v.begin(), v.end());
                break;
            }
            case Modality::Expression: {
                const auto v = geometry::expression_features(*f);
                data.insert(data.end(), v.values.begin(), v.values.end());
                break;
            }
            case Modality::Coordinates: {
                const auto v = geometry::flatten_values(f->landmarks, src.roles);
                data.insert(data.end(), v.begin(), v.end());
                break;
            }
            default: append_image(frame_image(*f, m, src), data);
        }
    }
    shape.insert(shape.begin(), frames.size());
    return nn::Tensor(std::move(shape), std::move(data));
}

}  // namespace palsyfuse::modalities

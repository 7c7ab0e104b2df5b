#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "palsyfuse/datamodel.hpp"
#include "palsyfuse/geometry.hpp"
#include "palsyfuse/models.hpp"
#include "palsyfuse/nn/tensor.hpp"
#include "palsyfuse/rasterizer.hpp"

namespace palsyfuse::modalities {

// How each modality is obtained from a frame. RGB images are rendered as
// face sketches from the landmarks unless an image directory is given, in
// which case <dir>/<subject_id>/<frame_id>.ppm is read (.pgm for BnW).
struct ModalitySources {
    geometry::RoleMap roles = geometry::default_role_map();
    raster::ContourSet contours = raster::default_contours();
    std::size_t image_size = 64;
    std::optional<std::filesystem::path> rgb_dir;
    std::optional<std::filesystem::path> bnw_dir;
};

ImageBuffer frame_image(const LandmarkFrame& frame, models::Modality m, const ModalitySources& src);

// Pixel / 255 as a (C, H, W) sample appended to `out`.
void append_image(const ImageBuffer& img, std::vector<double>& out);

// Stacks the modality of each frame into an (N, ...) batch.
nn::Tensor build_inputs(models::Modality m, std::span<const LandmarkFrame* const> frames,
                        const ModalitySources& src);

nn::Shape sample_shape(models::Modality m, const ModalitySources& src);

}  // namespace palsyfuse::modalities

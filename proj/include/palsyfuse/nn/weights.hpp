#pragma once

#include <filesystem>
#include <string>

#include "palsyfuse/nn/layer.hpp"

namespace palsyfuse::nn {

// "NNW1" layout, all integers u32 little-endian:
//   magic "NNW1", version (1), record count
//   per layer owning tensors (pre-order): kind tag, tensor count,
//     per tensor: rank, dims..., f64 little-endian values
// Tensors of a layer are its parameters followed by its buffers.
inline constexpr std::uint32_t kWeightsVersion = 1;

std::string save_weights_bytes(Layer& model);
void load_weights_bytes(Layer& model, const std::string& bytes);

void save_weights(Layer& model, const std::filesystem::path& path);
void load_weights(Layer& model, const std::filesystem::path& path);

}  // namespace palsyfuse::nn

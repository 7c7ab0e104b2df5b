#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "palsyfuse/nn/layer.hpp"

namespace palsyfuse::testing {

// Scalar objective on a layer output; fills `grad` with dL/dout when non-null.
using Objective = std::function<double(const nn::Tensor& out, nn::Tensor* grad)>;

// sum(out * r) for a fixed random r.
Objective projection_objective(const nn::Shape& out_shape, std::uint64_t seed);
// Mean BCE against fixed labels.
Objective bce_objective(const nn::Tensor& labels);

struct TensorCheck {
    std::string name;
    double rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t kinks = 0;  // entries skipped as non-differentiable
};

struct GradCheck {
    std::vector<TensorCheck> tensors;  // every parameter tensor, then "input"
    double worst() const;
    std::size_t checked() const;
    std::size_t kinks() const;
    std::string worst_name() const;
};

// Central differences with step eps on up to `samples` entries per tensor
// (all entries when the tensor is smaller). Error per tensor is
// |a - n|_2 / max(|a|_2 + |n|_2, 1e-6) over the checked entries. Entries
// where the loss is not smooth on the scale of eps (one-sided slopes
// disagree, or the central slopes at eps and eps/2 disagree) are counted in
// `kinks` instead. Dropout masks are held fixed by reseeding
// before every forward.
GradCheck check_gradients(nn::Layer& layer, nn::Tensor input, const Objective& objective, std::size_t samples,
                          std::uint64_t seed, double eps = 1e-5, bool check_input = true);

nn::Tensor random_tensor(const nn::Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0);

}  // namespace palsyfuse::testing

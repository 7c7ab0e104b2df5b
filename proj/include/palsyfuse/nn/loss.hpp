#pragma once

#include "palsyfuse/nn/tensor.hpp"

namespace palsyfuse::nn {

inline constexpr double kProbClamp = 1e-7;

struct LossResult {
    double loss = 0.0;
    Tensor grad;  // dL/dp, same shape as p
};

// Mean binary cross-entropy. p is clamped to [1e-7, 1 - 1e-7] first.
LossResult bce_loss(const Tensor& p, const Tensor& y);

}  // namespace palsyfuse::nn

#include "palsyfuse/nn/loss.hpp"

#include <algorithm>
#include <cmath>

#include "palsyfuse/error.hpp"

namespace palsyfuse::nn {

LossResult bce_loss(const Tensor& p, const Tensor& y) {
    if (p.shape() != y.shape()) {
        throw ShapeError("bce_loss: prediction shape " + shape_string(p.shape()) + " does not match target shape " +
                         shape_string(y.shape()));
    }
    if (p.empty()) throw ShapeError("bce_loss: empty batch");
    const double n = static_cast<double>(p.size());
    LossResult r{0.0, Tensor(p.shape())};
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double q = std::clamp(p[i], kProbClamp, 1.0 - kProbClamp);
        const double t = y[i];
        r.loss -= t * std::log(q) + (1.0 - t) * std::log(1.0 - q);
        r.grad[i] = (q - t) / (q * (1.0 - q)) / n;
    }
    r.loss /= n;
    return r;
}

}  // namespace palsyfuse::nn

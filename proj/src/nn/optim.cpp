#include "palsyfuse/nn/optim.hpp"

#include <cmath>

#include "palsyfuse/error.hpp"

namespace palsyfuse::nn {

std::string to_string(OptimizerKind k) { return k == OptimizerKind::SGD ? "sgd" : "adamw"; }

OptimizerKind parse_optimizer(const std::string& s) {
    if (s == "sgd") return OptimizerKind::SGD;
    if (s == "adamw") return OptimizerKind::AdamW;
    throw ConfigError("unknown optimizer '" + s + "' (expected sgd or adamw)");
}

Optimizer::Optimizer(OptimizerConfig config, std::vector<Param*> params)
    : config_(config), params_(std::move(params)) {
    if (!(config_.lr > 0.0)) throw ConfigError("optimizer: learning rate must be positive");
    for (auto* p : params_) {
        if (p->grad.shape() != p->value.shape()) {
            throw ShapeError("optimizer: gradient shape " + shape_string(p->grad.shape()) + " of parameter '" +
                             p->name + "' does not match " + shape_string(p->value.shape()));
        }
        if (config_.kind == OptimizerKind::AdamW) {
            m_.emplace_back(p->value.shape());
            v_.emplace_back(p->value.shape());
        }
    }
}

void Optimizer::step() {
    ++steps_;
    if (config_.kind == OptimizerKind::SGD) {
        for (auto* p : params_) {
            for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] -= config_.lr * p->grad[i];
        }
        return;
    }
    const double t = static_cast<double>(steps_);
    const double c1 = 1.0 - std::pow(config_.beta1, t);
    const double c2 = 1.0 - std::pow(config_.beta2, t);
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Param& p = *params_[k];
        Tensor& m = m_[k];
        Tensor& v = v_[k];
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = p.grad[i];
            p.value[i] -= config_.lr * config_.weight_decay * p.value[i];
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            p.value[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
        }
    }
}

}  // namespace palsyfuse::nn

#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "palsyfuse/nn/loss.hpp"
#include "palsyfuse/rng.hpp"

namespace palsyfuse::testing {

nn::Tensor random_tensor(const nn::Shape& shape, std::uint64_t seed, double lo, double hi) {
    nn::Tensor t(shape);
    Rng rng(seed);
    for (auto& v : t.values()) v = rng.uniform(lo, hi);
    return t;
}

Objective projection_objective(const nn::Shape& out_shape, std::uint64_t seed) {
    nn::Tensor r = random_tensor(out_shape, seed);
    return [r](const nn::Tensor& out, nn::Tensor* grad) {
        double s = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * r[i];
        if (grad) *grad = r;
        return s;
    };
}

Objective bce_objective(const nn::Tensor& labels) {
    return [labels](const nn::Tensor& out, nn::Tensor* grad) {
        auto res = nn::bce_loss(out, labels);
        if (grad) *grad = std::move(res.grad);
        return res.loss;
    };
}

std::size_t GradCheck::checked() const {
    std::size_t c = 0;
    for (const auto& t : tensors) c += t.checked;
    return c;
}

std::size_t GradCheck::kinks() const {
    std::size_t c = 0;
    for (const auto& t : tensors) c += t.kinks;
    return c;
}

double GradCheck::worst() const {
    double w = 0.0;
    for (const auto& t : tensors) w = std::max(w, t.rel_error);
    return w;
}

std::string GradCheck::worst_name() const {
    const TensorCheck* w = nullptr;
    for (const auto& t : tensors) {
        if (!w || t.rel_error > w->rel_error) w = &t;
    }
    return w ? w->name : "";
}

namespace {

std::vector<std::size_t> pick(std::size_t n, std::size_t samples, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (n <= samples) return idx;
    rng.shuffle(idx.begin(), idx.end());
    idx.resize(samples);
    std::sort(idx.begin(), idx.end());
    return idx;
}

TensorCheck compare(std::string name, const std::vector<double>& a, const std::vector<double>& n,
                    std::size_t kinks) {
    double diff = 0.0, na = 0.0, nn_ = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - n[i]) * (a[i] - n[i]);
        na += a[i] * a[i];
        nn_ += n[i] * n[i];
    }
    const double denom = std::max(std::sqrt(na) + std::sqrt(nn_), 1e-6);
    return {std::move(name), std::sqrt(diff) / denom, a.size(), kinks};
}

}  // namespace

GradCheck check_gradients(nn::Layer& layer, nn::Tensor input, const Objective& objective, std::size_t samples,
                          std::uint64_t seed, double eps, bool check_input) {
    const std::uint64_t mask_seed = derive_seed(seed, "masks");
    auto loss_at = [&](const nn::Tensor& x) {
        nn::reseed_all(layer, mask_seed);
        return objective(layer.forward(x, nn::Mode::Train), nullptr);
    };

    nn::reseed_all(layer, mask_seed);
    nn::Tensor out = layer.forward(input, nn::Mode::Train);
    nn::Tensor g;
    objective(out, &g);
    const nn::Tensor dx = layer.backward(g);

    std::vector<nn::Param*> params;
    std::vector<std::string> names;
    for (auto* l : nn::all_layers(layer)) {
        const auto own = l->own_params();
        for (std::size_t i = 0; i < own.size(); ++i) {
            params.push_back(own[i]);
            names.push_back(l->name() + "/" + own[i]->name + (own.size() > 2 ? "#" + std::to_string(i) : ""));
        }
    }
    std::vector<nn::Tensor> analytic;
    for (auto* p : params) analytic.push_back(p->grad);

    Rng rng(derive_seed(seed, "entries"));
    // Central difference at one entry. Returns false when the loss is not
    // smooth on the scale of eps around the entry (a ReLU kink or a
    // near-degenerate normalization lies inside the window): either the two
    // one-sided slopes disagree, or the central slopes at eps and eps/2 do.
    auto probe = [eps](double& entry, const auto& loss, double& slope) {
        const double orig = entry;
        auto at = [&](double delta) {
            entry = orig + delta;
            const double l = loss();
            entry = orig;
            return l;
        };
        const double l0 = at(0.0), lp = at(eps), lm = at(-eps), hp = at(eps / 2), hm = at(-eps / 2);
        const double fwd = (lp - l0) / eps, bwd = (l0 - lm) / eps;
        const double half = (hp - hm) / eps;
        slope = (lp - lm) / (2.0 * eps);
        const bool sided = std::abs(fwd - bwd) <= 1e-3 * (std::abs(fwd) + std::abs(bwd)) + 1e-7;
        const bool stable = std::abs(slope - half) <= 1e-5 * (std::abs(slope) + std::abs(half)) + 1e-8;
        return sided && stable;
    };

    GradCheck report;
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& value = params[k]->value;
        std::vector<double> a, n;
        std::size_t kinks = 0;
        for (auto i : pick(value.size(), samples, rng)) {
            double d = 0.0;
            if (probe(value[i], [&] { return loss_at(input); }, d)) {
                a.push_back(analytic[k][i]);
                n.push_back(d);
            } else {
                ++kinks;
            }
        }
        report.tensors.push_back(compare(names[k], a, n, kinks));
    }
    if (check_input) {
        std::vector<double> a, n;
        std::size_t kinks = 0;
        for (auto i : pick(input.size(), samples, rng)) {
            double d = 0.0;
            if (probe(input[i], [&] { return loss_at(input); }, d)) {
                a.push_back(dx[i]);
                n.push_back(d);
            } else {
                ++kinks;
            }
        }
        report.tensors.push_back(compare("input", a, n, kinks));
    }
    return report;
}

}  // namespace palsyfuse::testing

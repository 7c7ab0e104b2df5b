#include "palsyfuse/nn/layer.hpp"

#include "palsyfuse/error.hpp"

namespace palsyfuse::nn {

std::string_view kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Linear: return "Linear";
        case LayerKind::ReLU: return "ReLU";
        case LayerKind::LeakyReLU: return "LeakyReLU";
        case LayerKind::GELU: return "GELU";
        case LayerKind::Sigmoid: return "Sigmoid";
        case LayerKind::Dropout: return "Dropout";
        case LayerKind::BatchNorm1d: return "BatchNorm1d";
        case LayerKind::LayerNorm: return "LayerNorm";
        case LayerKind::PatchEmbed: return "PatchEmbed";
        case LayerKind::TokenMix: return "TokenMix";
        case LayerKind::ChannelMix: return "ChannelMix";
        case LayerKind::Conv2d: return "Conv2d";
        case LayerKind::GlobalAvgPool: return "GlobalAvgPool";
        case LayerKind::Residual: return "Residual";
        case LayerKind::Flatten: return "Flatten";
        case LayerKind::Sequential: return "Sequential";
    }
    return "?";
}

std::string Layer::label() const { return "layer '" + name_ + "' (" + std::string(kind_name(kind())) + ")"; }

void Layer::fail_shape(const std::string& detail) const { throw ShapeError(label() + ": " + detail); }

void Layer::require_forward(bool cached) const {
    if (!cached) throw StateError(label() + ": backward called before a train-mode forward");
}

namespace {

void collect(Layer& l, std::vector<Layer*>& out) {
    out.push_back(&l);
    for (auto* c : l.children()) collect(*c, out);
}

}  // namespace

std::vector<Layer*> all_layers(Layer& root) {
    std::vector<Layer*> out;
    collect(root, out);
    return out;
}

std::vector<Param*> all_params(Layer& root) {
    std::vector<Param*> out;
    for (auto* l : all_layers(root)) {
        for (auto* p : l->own_params()) out.push_back(p);
    }
    return out;
}

std::size_t parameter_count(Layer& root) {
    std::size_t n = 0;
    for (auto* p : all_params(root)) n += p->value.size();
    return n;
}

void reseed_all(Layer& root, std::uint64_t seed) {
    for (auto* l : all_layers(root)) l->reseed(seed);
}

Layer& Sequential::add(std::unique_ptr<Layer> layer) {
    layers_.push_back(std::move(layer));
    return *layers_.back();
}

std::size_t Sequential::index_of(std::string_view name) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (layers_[i]->name() == name) return i;
    }
    return layers_.size();
}

Tensor Sequential::forward(const Tensor& x, Mode mode) {
    if (layers_.empty()) return x;
    return forward_until(x, layers_.size() - 1, mode);
}

Tensor Sequential::forward_until(const Tensor& x, std::size_t last, Mode mode) {
    if (last >= layers_.size()) throw ShapeError(label() + ": layer index out of range");
    Tensor h = layers_[0]->forward(x, mode);
    for (std::size_t i = 1; i <= last; ++i) h = layers_[i]->forward(h, mode);
    return h;
}

Tensor Sequential::backward(const Tensor& grad_out) {
    Tensor g = grad_out;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
}

std::vector<Layer*> Sequential::children() {
    std::vector<Layer*> out;
    for (auto& l : layers_) out.push_back(l.get());
    return out;
}

Residual::Residual(std::string name, std::unique_ptr<Sequential> body, std::unique_ptr<Sequential> shortcut)
    : Layer(std::move(name)), body_(std::move(body)), shortcut_(std::move(shortcut)) {}

Tensor Residual::forward(const Tensor& x, Mode mode) {
    Tensor y = body_->forward(x, mode);
    const Tensor skip = shortcut_ ? shortcut_->forward(x, mode) : x;
    if (y.shape() != skip.shape()) {
        fail_shape("branch shapes differ: body " + shape_string(y.shape()) + " vs shortcut " +
                   shape_string(skip.shape()));
    }
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += skip[i];
    return y;
}

Tensor Residual::backward(const Tensor& grad_out) {
    Tensor g = body_->backward(grad_out);
    const Tensor gs = shortcut_ ? shortcut_->backward(grad_out) : grad_out;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gs[i];
    return g;
}

std::vector<Layer*> Residual::children() {
    std::vector<Layer*> out{body_.get()};
    if (shortcut_) out.push_back(shortcut_.get());
    return out;
}

}  // namespace palsyfuse::nn

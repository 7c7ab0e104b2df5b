#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "palsyfuse/nn/tensor.hpp"
#include "palsyfuse/rng.hpp"

namespace palsyfuse::nn {

enum class Mode { Train, Eval };

// Numeric tags double as the kind tag of the weights file.
enum class LayerKind : std::uint32_t {
    Linear = 1,
    ReLU = 2,
    LeakyReLU = 3,
    GELU = 4,
    Sigmoid = 5,
    Dropout = 6,
    BatchNorm1d = 7,
    LayerNorm = 8,
    PatchEmbed = 9,
    TokenMix = 10,
    ChannelMix = 11,
    Conv2d = 12,
    GlobalAvgPool = 13,
    Residual = 14,
    Flatten = 15,
    Sequential = 16,
};

std::string_view kind_name(LayerKind k);

struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
};

enum class Init { KaimingUniform, XavierUniform };

// A differentiable layer. forward() in Train mode caches what backward()
// needs; backward() overwrites the gradients of the layer's own parameters
// and returns the gradient with respect to the input. Eval-mode forward does
// not modify the layer.
class Layer {
public:
    explicit Layer(std::string name) : name_(std::move(name)) {}
    virtual ~Layer() = default;
    Layer(const Layer&) = delete;
    Layer& operator=(const Layer&) = delete;

    virtual LayerKind kind() const = 0;
    const std::string& name() const { return name_; }
    // "name (Kind)" for error messages.
    std::string label() const;

    virtual Tensor forward(const Tensor& x, Mode mode) = 0;
    virtual Tensor backward(const Tensor& grad_out) = 0;

    // Trainable parameters and non-trainable state owned directly by this
    // layer (children excluded).
    virtual std::vector<Param*> own_params() { return {}; }
    virtual std::vector<Tensor*> own_buffers() { return {}; }
    virtual std::vector<Layer*> children() { return {}; }

    virtual void init(Rng& /*rng*/, Init /*scheme*/) {}
    virtual void reseed(std::uint64_t /*seed*/) {}

protected:
    [[noreturn]] void fail_shape(const std::string& detail) const;
    void require_forward(bool cached) const;

private:
    std::string name_;
};

// Depth-first traversal helpers (pre-order: a layer before its children).
std::vector<Layer*> all_layers(Layer& root);
std::vector<Param*> all_params(Layer& root);
std::size_t parameter_count(Layer& root);
void reseed_all(Layer& root, std::uint64_t seed);

class Sequential : public Layer {
public:
    explicit Sequential(std::string name) : Layer(std::move(name)) {}

    LayerKind kind() const override { return LayerKind::Sequential; }

    Layer& add(std::unique_ptr<Layer> layer);
    std::size_t size() const { return layers_.size(); }
    Layer& at(std::size_t i) { return *layers_.at(i); }
    const Layer& at(std::size_t i) const { return *layers_.at(i); }
    // Index of the top-level layer with this name, or size() if absent.
    std::size_t index_of(std::string_view name) const;

    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;
    // Runs layers [0, last] and returns the output of layer `last`.
    Tensor forward_until(const Tensor& x, std::size_t last, Mode mode);

    std::vector<Layer*> children() override;

private:
    std::vector<std::unique_ptr<Layer>> layers_;
};

// y = body(x) + shortcut(x); identity shortcut when none is given.
class Residual : public Layer {
public:
    Residual(std::string name, std::unique_ptr<Sequential> body, std::unique_ptr<Sequential> shortcut = nullptr);

    LayerKind kind() const override { return LayerKind::Residual; }
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;
    std::vector<Layer*> children() override;

    Sequential& body() { return *body_; }
    Sequential* shortcut() { return shortcut_.get(); }

private:
    std::unique_ptr<Sequential> body_;
    std::unique_ptr<Sequential> shortcut_;
};

}  // namespace palsyfuse::nn

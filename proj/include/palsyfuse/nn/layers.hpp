#pragma once

#include "palsyfuse/nn/layer.hpp"

namespace palsyfuse::nn {

// y = x W^T + b over the last dimension; W is (out, in).
class Linear : public Layer {
public:
    Linear(std::string name, std::size_t in, std::size_t out);
    LayerKind kind() const override { return LayerKind::Linear; }
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;
    std::vector<Param*> own_params() override { return {&weight_, &bias_}; }
    void init(Rng& rng, Init scheme) override;

    Param& weight() { return weight_; }
    Param& bias() { return bias_; }
    std::size_t in_features() const { return in_; }
    std::size_t out_features() const { return out_; }

private:
    std::size_t in_, out_;
    Param weight_, bias_;
    Tensor input_;
    bool cached_ = false;
};

class ReLU : public Layer {
public:
    using Layer::Layer;
    LayerKind kind() const override { return LayerKind::ReLU; }
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;

private:
    Tensor input_;
    bool cached_ = false;
};

class LeakyReLU : public Layer {
public:
    LeakyReLU(std::string name, double slope = 0.01) : Layer(std::move(name)), slope_(slope) {}
    LayerKind kind() const override { return LayerKind::LeakyReLU; }
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;
    double slope() const { return slope_; }

private:
    double slope_;
    Tensor input_;
    bool cached_ = false;
};

// Exact (erf) GELU.
class GELU : public Layer {
public:
    using Layer::Layer;
    LayerKind kind() const override { return LayerKind::GELU; }
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;

private:
    Tensor input_;
    bool cached_ = false;
};

class Sigmoid : public Layer {
public:
    using Layer::Layer;
    LayerKind kind() const override { return LayerKind::Sigmoid; }
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;

private:
    Tensor output_;
    bool cached_ = false;
};

// Inverted dropout: survivors are scaled by 1/(1-p) in Train mode, so Eval
// mode is the identity.
class Dropout : public Layer {
public:
    Dropout(std::string name, double p);
    LayerKind kind() const override { return LayerKind::Dropout; }
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;
    void reseed(std::uint64_t seed) override { rng_.reseed(derive_seed(seed, name())); }
    double probability() const { return p_; }

private:
    double p_;
    Rng rng_;
    std::vector<double> mask_;
    bool cached_ = false;
};

// Normalizes each feature of an (N, F) batch. Running statistics use the
// unbiased batch variance.
class BatchNorm1d : public Layer {
public:
    BatchNorm1d(std::string name, std::size_t features, double eps = 1e-5, double momentum = 0.1);
    LayerKind kind() const override { return LayerKind::BatchNorm1d; }
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;
    std::vector<Param*> own_params() override { return {&gamma_, &beta_}; }
    std::vector<Tensor*> own_buffers() override { return {&running_mean_, &running_var_}; }

    Param& gamma() { return gamma_; }
    Param& beta() { return beta_; }
    const Tensor& running_mean() const { return running_mean_; }
    const Tensor& running_var() const { return running_var_; }

private:
    std::size_t features_;
    double eps_, momentum_;
    Param gamma_, beta_;
    Tensor running_mean_, running_var_;
    Tensor xhat_;
    std::vector<double> inv_std_;
    bool cached_ = false;
};

// Normalizes over the last dimension.
class LayerNorm : public Layer {
public:
    LayerNorm(std::string name, std::size_t features, double eps = 1e-6);
    LayerKind kind() const override { return LayerKind::LayerNorm; }
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;
    std::vector<Param*> own_params() override { return {&gamma_, &beta_}; }

private:
    std::size_t features_;
    double eps_;
    Param gamma_, beta_;
    Tensor xhat_;
    std::vector<double> inv_std_;
    bool cached_ = false;
};

// Splits (N, C, H, W) images into non-overlapping P x P patches (row-major
// patch order, each patch flattened channel, row, column) and projects them
// with one shared linear map: output (N, S, D).
class PatchEmbed : public Layer {
public:
    PatchEmbed(std::string name, std::size_t channels, std::size_t image_size, std::size_t patch,
               std::size_t dim);
    LayerKind kind() const override { return LayerKind::PatchEmbed; }
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;
    std::vector<Param*> own_params() override { return proj_.own_params(); }
    void init(Rng& rng, Init scheme) override { proj_.init(rng, scheme); }

    std::size_t tokens() const { return (image_ / patch_) * (image_ / patch_); }

private:
    std::size_t channels_, image_, patch_, dim_;
    Linear proj_;
};

// (N, C, H, W) -> (N, S, C*P*P) and back.
Tensor extract_patches(const Tensor& images, std::size_t patch);
Tensor reconstruct_from_patches(const Tensor& patches, std::size_t channels, std::size_t height,
                                std::size_t width, std::size_t patch);

// MLP across tokens, shared over channels: for each sample X (S x C),
// Y = W2 GELU(W1 X + b1) + b2 with W1 (T x S), W2 (S x T).
class TokenMix : public Layer {
public:
    TokenMix(std::string name, std::size_t tokens, std::size_t hidden);
    LayerKind kind() const override { return LayerKind::TokenMix; }
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;
    std::vector<Param*> own_params() override { return {&w1_, &b1_, &w2_, &b2_}; }
    void init(Rng& rng, Init scheme) override;

private:
    std::size_t tokens_, hidden_;
    Param w1_, b1_, w2_, b2_;
    Tensor input_, pre_, act_;
    bool cached_ = false;
};

// MLP across channels, shared over tokens: Linear(C->H), GELU, Linear(H->C).
class ChannelMix : public Layer {
public:
    ChannelMix(std::string name, std::size_t channels, std::size_t hidden);
    LayerKind kind() const override { return LayerKind::ChannelMix; }
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;
    std::vector<Param*> own_params() override;
    void init(Rng& rng, Init scheme) override;

private:
    Linear fc1_;
    GELU act_;
    Linear fc2_;
};

class Conv2d : public Layer {
public:
    Conv2d(std::string name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
           std::size_t stride = 1, std::size_t padding = 0);
    LayerKind kind() const override { return LayerKind::Conv2d; }
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;
    std::vector<Param*> own_params() override { return {&weight_, &bias_}; }
    void init(Rng& rng, Init scheme) override;

    Param& weight() { return weight_; }
    Param& bias() { return bias_; }

private:
    std::size_t in_, out_, kernel_, stride_, padding_;
    Param weight_, bias_;
    Tensor input_;
    bool cached_ = false;
};

// Tokens: (N, S, C) -> (N, C). Spatial: (N, C, H, W) -> (N, C).
class GlobalAvgPool : public Layer {
public:
    enum class Over { Tokens, Spatial };
    GlobalAvgPool(std::string name, Over over) : Layer(std::move(name)), over_(over) {}
    LayerKind kind() const override { return LayerKind::GlobalAvgPool; }
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;
    Over over() const { return over_; }

private:
    Over over_;
    Shape input_shape_;
    bool cached_ = false;
};

class Flatten : public Layer {
public:
    using Layer::Layer;
    LayerKind kind() const override { return LayerKind::Flatten; }
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;

private:
    Shape input_shape_;
    bool cached_ = false;
};

}  // namespace palsyfuse::nn

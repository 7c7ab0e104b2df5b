#include "palsyfuse/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "palsyfuse/error.hpp"
#include "palsyfuse/nn/linalg.hpp"

namespace palsyfuse::nn {

namespace {

Param make_param(std::string name, Shape shape) {
    Tensor v(shape);
    Tensor g(std::move(shape));
    return Param{std::move(name), std::move(v), std::move(g)};
}

void fill_uniform(Tensor& t, Rng& rng, double bound) {
    for (auto& v : t.values()) v = rng.uniform(-bound, bound);
}

double init_bound(Init scheme, std::size_t fan_in, std::size_t fan_out) {
    if (scheme == Init::KaimingUniform) return std::sqrt(6.0 / static_cast<double>(fan_in));
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }
double gelu_grad(double x) {
    return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

}  // namespace

// ---------------------------------------------------------------- Linear

Linear::Linear(std::string name, std::size_t in, std::size_t out)
    : Layer(std::move(name)),
      in_(in),
      out_(out),
      weight_(make_param("weight", {out, in})),
      bias_(make_param("bias", {out})) {}

void Linear::init(Rng& rng, Init scheme) {
    fill_uniform(weight_.value, rng, init_bound(scheme, in_, out_));
    bias_.value.fill(0.0);
}

Tensor Linear::forward(const Tensor& x, Mode mode) {
    if (x.rank() < 2 || x.shape().back() != in_) {
        fail_shape("expected input (..., " + std::to_string(in_) + "), got " + shape_string(x.shape()));
    }
    const std::size_t rows = x.size() / in_;
    Shape out_shape = x.shape();
    out_shape.back() = out_;
    Tensor y(out_shape);
    matmul(false, true, rows, out_, in_, x.data(), weight_.value.data(), y.data());
    for (std::size_t r = 0; r < rows; ++r) {
        double* row = y.data() + r * out_;
        for (std::size_t j = 0; j < out_; ++j) row[j] += bias_.value[j];
    }
    if (mode == Mode::Train) {
        input_ = x;
        cached_ = true;
    }
    return y;
}

Tensor Linear::backward(const Tensor& g) {
    require_forward(cached_);
    if (g.size() != input_.size() / in_ * out_) fail_shape("gradient shape " + shape_string(g.shape()));
    const std::size_t rows = input_.size() / in_;
    matmul(true, false, out_, in_, rows, g.data(), input_.data(), weight_.grad.data());
    bias_.grad.fill(0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = g.data() + r * out_;
        for (std::size_t j = 0; j < out_; ++j) bias_.grad[j] += row[j];
    }
    Tensor dx(input_.shape());
    matmul(false, false, rows, in_, out_, g.data(), weight_.value.data(), dx.data());
    return dx;
}

// ---------------------------------------------------------------- activations

Tensor ReLU::forward(const Tensor& x, Mode mode) {
    Tensor y = x;
    for (auto& v : y.values()) v = v < 0.0 ? 0.0 : v;
    if (mode == Mode::Train) {
        input_ = x;
        cached_ = true;
    }
    return y;
}

Tensor ReLU::backward(const Tensor& g) {
    require_forward(cached_);
    Tensor dx = g;
    for (std::size_t i = 0; i < dx.size(); ++i) {
        if (!(input_[i] > 0.0)) dx[i] = 0.0;
    }
    return dx;
}

Tensor LeakyReLU::forward(const Tensor& x, Mode mode) {
    Tensor y = x;
    for (auto& v : y.values()) v = v > 0.0 ? v : slope_ * v;
    if (mode == Mode::Train) {
        input_ = x;
        cached_ = true;
    }
    return y;
}

Tensor LeakyReLU::backward(const Tensor& g) {
    require_forward(cached_);
    Tensor dx = g;
    for (std::size_t i = 0; i < dx.size(); ++i) {
        if (!(input_[i] > 0.0)) dx[i] *= slope_;
    }
    return dx;
}

Tensor GELU::forward(const Tensor& x, Mode mode) {
    Tensor y = x;
    for (auto& v : y.values()) v = gelu(v);
    if (mode == Mode::Train) {
        input_ = x;
        cached_ = true;
    }
    return y;
}

Tensor GELU::backward(const Tensor& g) {
    require_forward(cached_);
    Tensor dx = g;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= gelu_grad(input_[i]);
    return dx;
}

Tensor Sigmoid::forward(const Tensor& x, Mode mode) {
    Tensor y = x;
    for (auto& v : y.values()) {
        v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    if (mode == Mode::Train) {
        output_ = y;
        cached_ = true;
    }
    return y;
}

Tensor Sigmoid::backward(const Tensor& g) {
    require_forward(cached_);
    Tensor dx = g;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= output_[i] * (1.0 - output_[i]);
    return dx;
}

// ---------------------------------------------------------------- Dropout

Dropout::Dropout(std::string name, double p) : Layer(std::move(name)), p_(p) {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError(label() + ": probability must be in [0, 1)");
    rng_.reseed(derive_seed(0, this->name()));
}

Tensor Dropout::forward(const Tensor& x, Mode mode) {
    if (mode == Mode::Eval) return x;
    mask_.resize(x.size());
    const double keep = 1.0 / (1.0 - p_);
    Tensor y = x;
    for (std::size_t i = 0; i < y.size(); ++i) {
        mask_[i] = rng_.uniform() < p_ ? 0.0 : keep;
        y[i] *= mask_[i];
    }
    cached_ = true;
    return y;
}

Tensor Dropout::backward(const Tensor& g) {
    require_forward(cached_);
    if (g.size() != mask_.size()) fail_shape("gradient shape " + shape_string(g.shape()));
    Tensor dx = g;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= mask_[i];
    return dx;
}

// ---------------------------------------------------------------- BatchNorm1d

BatchNorm1d::BatchNorm1d(std::string name, std::size_t features, double eps, double momentum)
    : Layer(std::move(name)),
      features_(features),
      eps_(eps),
      momentum_(momentum),
      gamma_(make_param("gamma", {features})),
      beta_(make_param("beta", {features})),
      running_mean_({features}, 0.0),
      running_var_({features}, 1.0) {
    gamma_.value.fill(1.0);
}

Tensor BatchNorm1d::forward(const Tensor& x, Mode mode) {
    if (x.rank() != 2 || x.dim(1) != features_) {
        fail_shape("expected input (N, " + std::to_string(features_) + "), got " + shape_string(x.shape()));
    }
    const std::size_t n = x.dim(0), f = features_;
    Tensor y(x.shape());
    if (mode == Mode::Eval) {
        for (std::size_t j = 0; j < f; ++j) {
            const double inv = 1.0 / std::sqrt(running_var_[j] + eps_);
            for (std::size_t i = 0; i < n; ++i) {
                y[i * f + j] = (x[i * f + j] - running_mean_[j]) * inv * gamma_.value[j] + beta_.value[j];
            }
        }
        return y;
    }
    xhat_ = Tensor(x.shape());
    inv_std_.assign(f, 0.0);
    std::vector<double> mean(f, 0.0), var(f, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < f; ++j) mean[j] += x[i * f + j];
    }
    for (auto& m : mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < f; ++j) {
            const double d = x[i * f + j] - mean[j];
            var[j] += d * d;
        }
    }
    for (std::size_t j = 0; j < f; ++j) {
        const double biased = var[j] / static_cast<double>(n);
        inv_std_[j] = 1.0 / std::sqrt(biased + eps_);
        const double unbiased = n > 1 ? var[j] / static_cast<double>(n - 1) : biased;
        running_mean_[j] = (1.0 - momentum_) * running_mean_[j] + momentum_ * mean[j];
        running_var_[j] = (1.0 - momentum_) * running_var_[j] + momentum_ * unbiased;
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < f; ++j) {
            const double xh = (x[i * f + j] - mean[j]) * inv_std_[j];
            xhat_[i * f + j] = xh;
            y[i * f + j] = xh * gamma_.value[j] + beta_.value[j];
        }
    }
    cached_ = true;
    return y;
}

Tensor BatchNorm1d::backward(const Tensor& g) {
    require_forward(cached_);
    if (g.shape() != xhat_.shape()) fail_shape("gradient shape " + shape_string(g.shape()));
    const std::size_t n = g.dim(0), f = features_;
    std::vector<double> sum_g(f, 0.0), sum_gx(f, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < f; ++j) {
            sum_g[j] += g[i * f + j];
            sum_gx[j] += g[i * f + j] * xhat_[i * f + j];
        }
    }
    for (std::size_t j = 0; j < f; ++j) {
        gamma_.grad[j] = sum_gx[j];
        beta_.grad[j] = sum_g[j];
    }
    Tensor dx(g.shape());
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < f; ++j) {
            const double k = gamma_.value[j] * inv_std_[j];
            dx[i * f + j] = k * (g[i * f + j] - inv_n * sum_g[j] - xhat_[i * f + j] * inv_n * sum_gx[j]);
        }
    }
    return dx;
}

// ---------------------------------------------------------------- LayerNorm

LayerNorm::LayerNorm(std::string name, std::size_t features, double eps)
    : Layer(std::move(name)),
      features_(features),
      eps_(eps),
      gamma_(make_param("gamma", {features})),
      beta_(make_param("beta", {features})) {
    gamma_.value.fill(1.0);
}

Tensor LayerNorm::forward(const Tensor& x, Mode mode) {
    if (x.rank() < 2 || x.shape().back() != features_) {
        fail_shape("expected input (..., " + std::to_string(features_) + "), got " + shape_string(x.shape()));
    }
    const std::size_t rows = x.size() / features_, f = features_;
    Tensor y(x.shape());
    Tensor xhat(x.shape());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * f;
        double mean = 0.0;
        for (std::size_t j = 0; j < f; ++j) mean += xr[j];
        mean /= static_cast<double>(f);
        double var = 0.0;
        for (std::size_t j = 0; j < f; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= static_cast<double>(f);
        inv_std[r] = 1.0 / std::sqrt(var + eps_);
        for (std::size_t j = 0; j < f; ++j) {
            const double xh = (xr[j] - mean) * inv_std[r];
            xhat[r * f + j] = xh;
            y[r * f + j] = xh * gamma_.value[j] + beta_.value[j];
        }
    }
    if (mode == Mode::Train) {
        xhat_ = std::move(xhat);
        inv_std_ = std::move(inv_std);
        cached_ = true;
    }
    return y;
}

Tensor LayerNorm::backward(const Tensor& g) {
    require_forward(cached_);
    if (g.shape() != xhat_.shape()) fail_shape("gradient shape " + shape_string(g.shape()));
    const std::size_t rows = g.size() / features_, f = features_;
    gamma_.grad.fill(0.0);
    beta_.grad.fill(0.0);
    Tensor dx(g.shape());
    std::vector<double> dxh(f);
    for (std::size_t r = 0; r < rows; ++r) {
        double mean_d = 0.0, mean_dx = 0.0;
        for (std::size_t j = 0; j < f; ++j) {
            const double gj = g[r * f + j];
            gamma_.grad[j] += gj * xhat_[r * f + j];
            beta_.grad[j] += gj;
            dxh[j] = gj * gamma_.value[j];
            mean_d += dxh[j];
            mean_dx += dxh[j] * xhat_[r * f + j];
        }
        mean_d /= static_cast<double>(f);
        mean_dx /= static_cast<double>(f);
        for (std::size_t j = 0; j < f; ++j) {
            dx[r * f + j] = inv_std_[r] * (dxh[j] - mean_d - xhat_[r * f + j] * mean_dx);
        }
    }
    return dx;
}

// ---------------------------------------------------------------- patches

Tensor extract_patches(const Tensor& images, std::size_t patch) {
    if (images.rank() != 4) throw ShapeError("extract_patches: expected (N, C, H, W), got " + shape_string(images.shape()));
    const std::size_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
    if (patch == 0 || h % patch != 0 || w % patch != 0) {
        throw ConfigError("image size " + std::to_string(h) + "x" + std::to_string(w) +
                          " is not divisible by patch " + std::to_string(patch));
    }
    const std::size_t ph = h / patch, pw = w / patch, s = ph * pw, d = c * patch * patch;
    Tensor out({n, s, d});
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t py = 0; py < ph; ++py) {
            for (std::size_t px = 0; px < pw; ++px) {
                double* dst = out.data() + (b * s + py * pw + px) * d;
                for (std::size_t ch = 0; ch < c; ++ch) {
                    for (std::size_t y = 0; y < patch; ++y) {
                        const double* src = images.data() + ((b * c + ch) * h + py * patch + y) * w + px * patch;
                        std::copy_n(src, patch, dst + (ch * patch + y) * patch);
                    }
                }
            }
        }
    }
    return out;
}

Tensor reconstruct_from_patches(const Tensor& patches, std::size_t c, std::size_t h, std::size_t w,
                                std::size_t patch) {
    if (patches.rank() != 3) throw ShapeError("reconstruct_from_patches: expected (N, S, D)");
    const std::size_t n = patches.dim(0), ph = h / patch, pw = w / patch, s = ph * pw, d = c * patch * patch;
    if (patches.dim(1) != s || patches.dim(2) != d) {
        throw ShapeError("reconstruct_from_patches: patch tensor " + shape_string(patches.shape()) +
                         " does not match the requested image geometry");
    }
    Tensor out({n, c, h, w});
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t py = 0; py < ph; ++py) {
            for (std::size_t px = 0; px < pw; ++px) {
                const double* src = patches.data() + (b * s + py * pw + px) * d;
                for (std::size_t ch = 0; ch < c; ++ch) {
                    for (std::size_t y = 0; y < patch; ++y) {
                        double* dst = out.data() + ((b * c + ch) * h + py * patch + y) * w + px * patch;
                        std::copy_n(src + (ch * patch + y) * patch, patch, dst);
                    }
                }
            }
        }
    }
    return out;
}

PatchEmbed::PatchEmbed(std::string name, std::size_t channels, std::size_t image_size, std::size_t patch,
                       std::size_t dim)
    : Layer(std::move(name)),
      channels_(channels),
      image_(image_size),
      patch_(patch),
      dim_(dim),
      proj_(this->name() + ".proj", channels * patch * patch, dim) {
    if (patch == 0 || image_size % patch != 0) {
        throw ConfigError(label() + ": image size " + std::to_string(image_size) +
                          " is not divisible by patch " + std::to_string(patch));
    }
}

Tensor PatchEmbed::forward(const Tensor& x, Mode mode) {
    if (x.rank() != 4 || x.dim(1) != channels_ || x.dim(2) != image_ || x.dim(3) != image_) {
        fail_shape("expected input (N, " + std::to_string(channels_) + ", " + std::to_string(image_) + ", " +
                   std::to_string(image_) + "), got " + shape_string(x.shape()));
    }
    return proj_.forward(extract_patches(x, patch_), mode);
}

Tensor PatchEmbed::backward(const Tensor& g) {
    Tensor dp = proj_.backward(g);
    return reconstruct_from_patches(dp, channels_, image_, image_, patch_);
}

// ---------------------------------------------------------------- TokenMix

TokenMix::TokenMix(std::string name, std::size_t tokens, std::size_t hidden)
    : Layer(std::move(name)),
      tokens_(tokens),
      hidden_(hidden),
      w1_(make_param("w1", {hidden, tokens})),
      b1_(make_param("b1", {hidden})),
      w2_(make_param("w2", {tokens, hidden})),
      b2_(make_param("b2", {tokens})) {}

void TokenMix::init(Rng& rng, Init scheme) {
    fill_uniform(w1_.value, rng, init_bound(scheme, tokens_, hidden_));
    fill_uniform(w2_.value, rng, init_bound(scheme, hidden_, tokens_));
    b1_.value.fill(0.0);
    b2_.value.fill(0.0);
}

Tensor TokenMix::forward(const Tensor& x, Mode mode) {
    if (x.rank() != 3 || x.dim(1) != tokens_) {
        fail_shape("expected input (N, " + std::to_string(tokens_) + ", C), got " + shape_string(x.shape()));
    }
    const std::size_t n = x.dim(0), s = tokens_, c = x.dim(2), t = hidden_;
    Tensor pre({n, t, c}), act({n, t, c}), y(x.shape());
    for (std::size_t b = 0; b < n; ++b) {
        double* z = pre.data() + b * t * c;
        double* a = act.data() + b * t * c;
        matmul(false, false, t, c, s, w1_.value.data(), x.data() + b * s * c, z);
        for (std::size_t i = 0; i < t; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                z[i * c + j] += b1_.value[i];
                a[i * c + j] = gelu(z[i * c + j]);
            }
        }
        double* out = y.data() + b * s * c;
        matmul(false, false, s, c, t, w2_.value.data(), a, out);
        for (std::size_t i = 0; i < s; ++i) {
            for (std::size_t j = 0; j < c; ++j) out[i * c + j] += b2_.value[i];
        }
    }
    if (mode == Mode::Train) {
        input_ = x;
        pre_ = std::move(pre);
        act_ = std::move(act);
        cached_ = true;
    }
    return y;
}

Tensor TokenMix::backward(const Tensor& g) {
    require_forward(cached_);
    if (g.shape() != input_.shape()) fail_shape("gradient shape " + shape_string(g.shape()));
    const std::size_t n = g.dim(0), s = tokens_, c = g.dim(2), t = hidden_;
    w1_.grad.fill(0.0);
    w2_.grad.fill(0.0);
    b1_.grad.fill(0.0);
    b2_.grad.fill(0.0);
    Tensor dx(g.shape());
    std::vector<double> dz(t * c);
    for (std::size_t b = 0; b < n; ++b) {
        const double* gy = g.data() + b * s * c;
        const double* a = act_.data() + b * t * c;
        const double* z = pre_.data() + b * t * c;
        matmul(false, true, s, t, c, gy, a, w2_.grad.data(), true);
        for (std::size_t i = 0; i < s; ++i) {
            for (std::size_t j = 0; j < c; ++j) b2_.grad[i] += gy[i * c + j];
        }
        matmul(true, false, t, c, s, w2_.value.data(), gy, dz.data());
        for (std::size_t i = 0; i < t; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                dz[i * c + j] *= gelu_grad(z[i * c + j]);
                b1_.grad[i] += dz[i * c + j];
            }
        }
        matmul(false, true, t, s, c, dz.data(), input_.data() + b * s * c, w1_.grad.data(), true);
        matmul(true, false, s, c, t, w1_.value.data(), dz.data(), dx.data() + b * s * c);
    }
    return dx;
}

// ---------------------------------------------------------------- ChannelMix

ChannelMix::ChannelMix(std::string name, std::size_t channels, std::size_t hidden)
    : Layer(std::move(name)),
      fc1_(this->name() + ".fc1", channels, hidden),
      act_(this->name() + ".gelu"),
      fc2_(this->name() + ".fc2", hidden, channels) {}

std::vector<Param*> ChannelMix::own_params() {
    auto p = fc1_.own_params();
    for (auto* q : fc2_.own_params()) p.push_back(q);
    return p;
}

void ChannelMix::init(Rng& rng, Init scheme) {
    fc1_.init(rng, scheme);
    fc2_.init(rng, scheme);
}

Tensor ChannelMix::forward(const Tensor& x, Mode mode) {
    if (x.rank() != 3) fail_shape("expected input (N, S, C), got " + shape_string(x.shape()));
    return fc2_.forward(act_.forward(fc1_.forward(x, mode), mode), mode);
}

Tensor ChannelMix::backward(const Tensor& g) {
    return fc1_.backward(act_.backward(fc2_.backward(g)));
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::string name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
               std::size_t stride, std::size_t padding)
    : Layer(std::move(name)),
      in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      stride_(stride),
      padding_(padding),
      weight_(make_param("weight", {out_channels, in_channels, kernel, kernel})),
      bias_(make_param("bias", {out_channels})) {
    if (stride == 0 || kernel == 0) throw ConfigError(label() + ": kernel and stride must be positive");
}

void Conv2d::init(Rng& rng, Init scheme) {
    const std::size_t fan_in = in_ * kernel_ * kernel_, fan_out = out_ * kernel_ * kernel_;
    fill_uniform(weight_.value, rng, init_bound(scheme, fan_in, fan_out));
    bias_.value.fill(0.0);
}

namespace {

struct ConvGeometry {
    std::size_t c, h, w, k, stride, pad, ho, wo;
};

void im2col(const ConvGeometry& g, const double* img, double* cols) {
    const std::size_t plane = g.ho * g.wo;
    for (std::size_t ch = 0; ch < g.c; ++ch) {
        for (std::size_t ki = 0; ki < g.k; ++ki) {
            for (std::size_t kj = 0; kj < g.k; ++kj) {
                double* row = cols + ((ch * g.k + ki) * g.k + kj) * plane;
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
                        const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) &&
                                            ix < static_cast<long>(g.w);
                        row[oy * g.wo + ox] = inside ? img[(ch * g.h + iy) * g.w + ix] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im(const ConvGeometry& g, const double* cols, double* img) {
    const std::size_t plane = g.ho * g.wo;
    for (std::size_t ch = 0; ch < g.c; ++ch) {
        for (std::size_t ki = 0; ki < g.k; ++ki) {
            for (std::size_t kj = 0; kj < g.k; ++kj) {
                const double* row = cols + ((ch * g.k + ki) * g.k + kj) * plane;
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
                    if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
                        if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
                        img[(ch * g.h + iy) * g.w + ix] += row[oy * g.wo + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor Conv2d::forward(const Tensor& x, Mode mode) {
    if (x.rank() != 4 || x.dim(1) != in_) {
        fail_shape("expected input (N, " + std::to_string(in_) + ", H, W), got " + shape_string(x.shape()));
    }
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    if (h + 2 * padding_ < kernel_ || w + 2 * padding_ < kernel_) fail_shape("input smaller than kernel");
    const ConvGeometry geo{in_, h, w, kernel_, stride_, padding_, (h + 2 * padding_ - kernel_) / stride_ + 1,
                           (w + 2 * padding_ - kernel_) / stride_ + 1};
    const std::size_t plane = geo.ho * geo.wo, kdim = in_ * kernel_ * kernel_;
    Tensor y({n, out_, geo.ho, geo.wo});
    std::vector<double> cols(kdim * plane);
    for (std::size_t b = 0; b < n; ++b) {
        im2col(geo, x.data() + b * in_ * h * w, cols.data());
        double* out = y.data() + b * out_ * plane;
        matmul(false, false, out_, plane, kdim, weight_.value.data(), cols.data(), out);
        for (std::size_t o = 0; o < out_; ++o) {
            for (std::size_t p = 0; p < plane; ++p) out[o * plane + p] += bias_.value[o];
        }
    }
    if (mode == Mode::Train) {
        input_ = x;
        cached_ = true;
    }
    return y;
}

Tensor Conv2d::backward(const Tensor& g) {
    require_forward(cached_);
    const std::size_t n = input_.dim(0), h = input_.dim(2), w = input_.dim(3);
    const ConvGeometry geo{in_, h, w, kernel_, stride_, padding_, (h + 2 * padding_ - kernel_) / stride_ + 1,
                           (w + 2 * padding_ - kernel_) / stride_ + 1};
    const std::size_t plane = geo.ho * geo.wo, kdim = in_ * kernel_ * kernel_;
    if (g.rank() != 4 || g.dim(0) != n || g.dim(1) != out_ || g.dim(2) != geo.ho || g.dim(3) != geo.wo) {
        fail_shape("gradient shape " + shape_string(g.shape()));
    }
    weight_.grad.fill(0.0);
    bias_.grad.fill(0.0);
    Tensor dx(input_.shape());
    std::vector<double> cols(kdim * plane), dcols(kdim * plane);
    for (std::size_t b = 0; b < n; ++b) {
        const double* gy = g.data() + b * out_ * plane;
        im2col(geo, input_.data() + b * in_ * h * w, cols.data());
        matmul(false, true, out_, kdim, plane, gy, cols.data(), weight_.grad.data(), true);
        for (std::size_t o = 0; o < out_; ++o) {
            for (std::size_t p = 0; p < plane; ++p) bias_.grad[o] += gy[o * plane + p];
        }
        matmul(true, false, kdim, plane, out_, weight_.value.data(), gy, dcols.data());
        col2im(geo, dcols.data(), dx.data() + b * in_ * h * w);
    }
    return dx;
}

// ---------------------------------------------------------------- pooling, flatten

Tensor GlobalAvgPool::forward(const Tensor& x, Mode mode) {
    Tensor y;
    if (over_ == Over::Tokens) {
        if (x.rank() != 3) fail_shape("expected input (N, S, C), got " + shape_string(x.shape()));
        const std::size_t n = x.dim(0), s = x.dim(1), c = x.dim(2);
        y = Tensor({n, c});
        for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t t = 0; t < s; ++t) {
                for (std::size_t j = 0; j < c; ++j) y[b * c + j] += x[(b * s + t) * c + j];
            }
        }
        for (auto& v : y.values()) v /= static_cast<double>(s);
    } else {
        if (x.rank() != 4) fail_shape("expected input (N, C, H, W), got " + shape_string(x.shape()));
        const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
        y = Tensor({n, c});
        for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t j = 0; j < c; ++j) {
                const double* p = x.data() + (b * c + j) * plane;
                double sum = 0.0;
                for (std::size_t q = 0; q < plane; ++q) sum += p[q];
                y[b * c + j] = sum / static_cast<double>(plane);
            }
        }
    }
    if (mode == Mode::Train) {
        input_shape_ = x.shape();
        cached_ = true;
    }
    return y;
}

Tensor GlobalAvgPool::backward(const Tensor& g) {
    require_forward(cached_);
    Tensor dx(input_shape_);
    if (over_ == Over::Tokens) {
        const std::size_t n = input_shape_[0], s = input_shape_[1], c = input_shape_[2];
        for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t t = 0; t < s; ++t) {
                for (std::size_t j = 0; j < c; ++j) dx[(b * s + t) * c + j] = g[b * c + j] / static_cast<double>(s);
            }
        }
    } else {
        const std::size_t n = input_shape_[0], c = input_shape_[1], plane = input_shape_[2] * input_shape_[3];
        for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t j = 0; j < c; ++j) {
                const double v = g[b * c + j] / static_cast<double>(plane);
                std::fill_n(dx.data() + (b * c + j) * plane, plane, v);
            }
        }
    }
    return dx;
}

Tensor Flatten::forward(const Tensor& x, Mode mode) {
    if (x.rank() < 1) fail_shape("cannot flatten a scalar");
    if (mode == Mode::Train) {
        input_shape_ = x.shape();
        cached_ = true;
    }
    return x.reshaped({x.dim(0), x.size() / x.dim(0)});
}

Tensor Flatten::backward(const Tensor& g) {
    require_forward(cached_);
    return g.reshaped(input_shape_);
}

}  // namespace palsyfuse::nn

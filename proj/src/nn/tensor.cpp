#include "palsyfuse/nn/tensor.hpp"

#include <algorithm>
#include <cstring>

#include "palsyfuse/error.hpp"

namespace palsyfuse::nn {

std::string shape_string(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

std::size_t shape_size(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    for (auto d : shape_) {
        if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape_));
    }
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
        throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_string(shape_));
    }
}

Tensor Tensor::reshaped(Shape shape) const& {
    Tensor t = *this;
    return std::move(t).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
    if (shape_size(shape) != data_.size()) {
        throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    shape_ = std::move(shape);
    return std::move(*this);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::rows(std::size_t begin, std::size_t count) const {
    if (shape_.empty() || begin + count > shape_[0]) throw ShapeError("row range out of bounds");
    const std::size_t stride = data_.size() / shape_[0];
    Shape s = shape_;
    s[0] = count;
    std::vector<double> d(data_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                          data_.begin() + static_cast<std::ptrdiff_t>((begin + count) * stride));
    return Tensor(std::move(s), std::move(d));
}

Tensor Tensor::gather(std::span<const std::size_t> idx) const {
    if (shape_.empty()) throw ShapeError("gather on a scalar tensor");
    const std::size_t stride = data_.size() / shape_[0];
    Shape s = shape_;
    s[0] = idx.size();
    std::vector<double> d(idx.size() * stride);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= shape_[0]) throw ShapeError("gather index out of bounds");
        std::memcpy(d.data() + r * stride, data_.data() + idx[r] * stride, stride * sizeof(double));
    }
    return Tensor(std::move(s), std::move(d));
}

Tensor concat_columns(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0)) {
        throw ShapeError("concat_columns: expected (N, a) and (N, b), got " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()));
    }
    const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
    Tensor out({n, ca + cb});
    for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(a.data() + i * ca, ca, out.data() + i * (ca + cb));
        std::copy_n(b.data() + i * cb, cb, out.data() + i * (ca + cb) + ca);
    }
    return out;
}

}  // namespace palsyfuse::nn

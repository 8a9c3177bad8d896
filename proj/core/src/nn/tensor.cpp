#include "cipher/nn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cipher/error.hpp"

namespace cipher::nn {

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_numel(shape_)), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != static_cast<std::int64_t>(data_.size())) {
        throw ShapeError("tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                         shape_str(shape_));
    }
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != numel()) {
        throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::rows(std::int64_t begin, std::int64_t end) const {
    if (shape_.empty() || begin < 0 || end > shape_[0] || begin > end) {
        throw ShapeError("row slice out of range for " + shape_str(shape_));
    }
    const std::int64_t row = shape_[0] == 0 ? 0 : numel() / shape_[0];
    Shape s = shape_;
    s[0] = end - begin;
    return Tensor(std::move(s), std::vector<double>(data_.begin() + begin * row, data_.begin() + end * row));
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) return Tensor{};
    Shape row_shape = parts.front().shape();
    std::int64_t rows = 0;
    for (const auto& p : parts) {
        Shape s = p.shape();
        if (s != row_shape && !(s.size() == row_shape.size() && std::equal(s.begin() + 1, s.end(), row_shape.begin() + 1))) {
            throw ShapeError("concat_rows: incompatible shapes " + shape_str(row_shape) + " and " + shape_str(s));
        }
        rows += s.empty() ? 1 : s[0];
    }
    Shape out_shape = row_shape;
    out_shape[0] = rows;
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(shape_numel(out_shape)));
    for (const auto& p : parts) data.insert(data.end(), p.vec().begin(), p.vec().end());
    return Tensor(std::move(out_shape), std::move(data));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    double m = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace cipher::nn

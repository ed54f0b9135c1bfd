#include "mcfe/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mcfe/error.hpp"

namespace mcfe {

std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::invalid_argument: return "invalid_argument";
        case ErrorKind::shape_mismatch: return "shape_mismatch";
        case ErrorKind::numeric_overflow: return "numeric_overflow";
        case ErrorKind::missing_gradient: return "missing_gradient";
        case ErrorKind::degenerate_mirror: return "degenerate_mirror";
        case ErrorKind::no_flip: return "no_flip";
        case ErrorKind::stalled: return "stalled";
        case ErrorKind::reflection_unreachable: return "reflection_unreachable";
        case ErrorKind::ratio_degenerate: return "ratio_degenerate";
        case ErrorKind::not_normalized: return "not_normalized";
        case ErrorKind::not_binary: return "not_binary";
        case ErrorKind::precondition: return "precondition";
        case ErrorKind::divergence: return "divergence";
        case ErrorKind::frozen_violation: return "frozen_violation";
        case ErrorKind::io: return "io";
        case ErrorKind::format: return "format";
        case ErrorKind::config: return "config";
    }
    return "unknown";
}

std::size_t shape_size(const Shape& shape) noexcept {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    for (auto extent : shape_) {
        if (extent == 0) throw Error(ErrorKind::shape_mismatch, "tensor extents must be positive: " + shape_string(shape_));
    }
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size()) {
        throw Error(ErrorKind::shape_mismatch, "shape " + shape_string(shape_) + " does not match " +
                                                   std::to_string(data_.size()) + " elements");
    }
}

Tensor Tensor::scalar(double value) { return Tensor({1}, std::vector<double>{value}); }

Tensor Tensor::vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
}

double Tensor::item() const {
    if (data_.size() != 1) throw Error(ErrorKind::shape_mismatch, "item() on tensor of shape " + shape_string(shape_));
    return data_[0];
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

Tensor Tensor::slice(std::size_t i) const {
    if (shape_.empty() || i >= shape_[0]) throw Error(ErrorKind::shape_mismatch, "slice index out of range");
    Shape inner(shape_.begin() + 1, shape_.end());
    if (inner.empty()) inner = {1};
    const std::size_t stride = data_.size() / shape_[0];
    return Tensor(inner, std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(i * stride),
                                             data_.begin() + static_cast<std::ptrdiff_t>((i + 1) * stride)));
}

Tensor stack(std::span<const Tensor> items) {
    if (items.empty()) throw Error(ErrorKind::invalid_argument, "stack of zero tensors");
    Shape shape{items.size()};
    const Shape& inner = items.front().shape();
    shape.insert(shape.end(), inner.begin(), inner.end());
    std::vector<double> data;
    data.reserve(shape_size(shape));
    for (const auto& t : items) {
        if (t.shape() != inner) {
            throw Error(ErrorKind::shape_mismatch, "stack: " + shape_string(t.shape()) + " vs " + shape_string(inner));
        }
        data.insert(data.end(), t.values().begin(), t.values().end());
    }
    return Tensor(std::move(shape), std::move(data));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) throw Error(ErrorKind::shape_mismatch, "max_abs_diff size mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace mcfe

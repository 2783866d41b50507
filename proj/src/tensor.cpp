#include "nflab/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <numeric>

namespace nflab {

namespace {
int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("tensor: non-positive dimension in shape");
        n *= d;
    }
    return shape.empty() ? 0 : n;
}
}  // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != static_cast<int64_t>(data_.size())) {
        throw ShapeError("tensor: data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_str());
    }
}

Tensor Tensor::full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
}

Tensor Tensor::from_vector(std::vector<double> v) {
    const int n = static_cast<int>(v.size());
    return Tensor({n}, std::move(v));
}

Tensor Tensor::randn(std::vector<int> shape, double stddev, Rng& rng) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, stddev);
    return t;
}

int Tensor::rows() const {
    if (rank() != 2) throw ShapeError("tensor: rows() on non-2D tensor " + shape_str());
    return shape_[0];
}

int Tensor::cols() const {
    if (rank() != 2) throw ShapeError("tensor: cols() on non-2D tensor " + shape_str());
    return shape_[1];
}

int Tensor::last_dim() const {
    if (shape_.empty()) return 0;
    return shape_.back();
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::fill(double v) {
    for (auto& x : data_) x = v;
}

std::string Tensor::shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape_.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape_[i]);
    }
    return s + "]";
}

void check_same_shape(const char* op, const char* operand, const Tensor& got,
                      const Tensor& want) {
    if (!got.same_shape(want)) {
        throw ShapeError(std::string(op) + ": operand '" + operand + "' has shape " +
                         got.shape_str() + ", expected " + want.shape_str());
    }
}

}  // namespace nflab

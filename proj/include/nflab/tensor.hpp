#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nflab/errors.hpp"
#include "nflab/rng.hpp"

namespace nflab {

// Dense row-major tensor of doubles. The universal value/gradient carrier;
// shapes are small (rank <= 3 in practice) so the shape vector is cheap.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, std::vector<double> data);

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int> shape, double v);
    static Tensor from_vector(std::vector<double> v);
    static Tensor randn(std::vector<int> shape, double stddev, Rng& rng);

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    // 2-D accessors; rows()/cols() check rank.
    int rows() const;
    int cols() const;
    double& at(int r, int c) { return data_[static_cast<size_t>(r) * cols_unchecked() + c]; }
    double at(int r, int c) const { return data_[static_cast<size_t>(r) * cols_unchecked() + c]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    bool all_finite() const;
    void fill(double v);

    // Size of the trailing dimension and the number of leading slices;
    // layer_norm/softmax normalize per trailing slice.
    int last_dim() const;
    int64_t n_slices() const { return last_dim() == 0 ? 0 : numel() / last_dim(); }

    std::string shape_str() const;  // e.g. "[3,4]"

private:
    int cols_unchecked() const { return shape_.back(); }

    std::vector<int> shape_;
    std::vector<double> data_;
};

// Throws ShapeError naming `op` and `operand` unless the shapes match.
void check_same_shape(const char* op, const char* operand, const Tensor& got,
                      const Tensor& want);

}  // namespace nflab

#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace subadapt {

/// Dense n-dimensional array of doubles, row-major. A scalar has an empty
/// shape and one element. The training core works in 64-bit throughout;
/// only file formats quantize (see dataio).
class Tensor {
public:
    Tensor() : data_(1, 0.0) {}  // scalar zero

    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
    static Tensor vec(std::vector<double> data);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t numel() const { return data_.size(); }
    std::size_t ndim() const { return shape_.size(); }
    bool is_scalar() const { return data_.size() == 1 && shape_.empty(); }

    std::size_t rows() const;
    std::size_t cols() const;

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& flat() { return data_; }
    const std::vector<double>& flat() const { return data_; }

    double& at(std::size_t i) { return data_[i]; }
    double at(std::size_t i) const { return data_[i]; }
    double& at(std::size_t i, std::size_t j) { return data_[i * cols() + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * cols() + j]; }

    /// Value of a scalar tensor.
    double item() const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

    void fill(double v);

    /// "[2x3]" for a 2x3 matrix, "[scalar]" for a scalar.
    std::string shape_str() const;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

std::string shape_str(const std::vector<std::size_t>& shape);

}  // namespace subadapt

#include "subadapt/tensor.hpp"

#include <cmath>

#include "subadapt/error.hpp"

namespace subadapt {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(product(shape_), 0.0) {
    for (std::size_t d : shape_) {
        if (d == 0) throw DimError("tensor dimensions must be positive, got " + shape_str());
    }
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    for (std::size_t d : shape_) {
        if (d == 0) throw DimError("tensor dimensions must be positive, got " + shape_str());
    }
    if (product(shape_) != data_.size()) {
        throw DimError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str());
    }
}

Tensor Tensor::scalar(double v) {
    Tensor t;
    t.data_[0] = v;
    return t;
}

Tensor Tensor::vec(std::vector<double> data) {
    std::size_t n = data.size();
    return Tensor({n}, std::move(data));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
    return Tensor({rows, cols}, std::move(data));
}

std::size_t Tensor::rows() const {
    if (shape_.size() != 2) throw DimError("rows() on non-matrix tensor " + shape_str());
    return shape_[0];
}

std::size_t Tensor::cols() const {
    if (shape_.size() != 2) throw DimError("cols() on non-matrix tensor " + shape_str());
    return shape_[1];
}

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() requires a one-element tensor, got " + shape_str());
    return data_[0];
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::fill(double v) {
    for (double& x : data_) x = v;
}

std::string Tensor::shape_str() const { return subadapt::shape_str(shape_); }

std::string shape_str(const std::vector<std::size_t>& shape) {
    if (shape.empty()) return "[scalar]";
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    s += "]";
    return s;
}

}  // namespace subadapt

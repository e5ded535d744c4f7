// SPDX-License-Identifier: Apache-2.0
#include "r2lab/tensor.hpp"

#include <cmath>
#include <sstream>

namespace r2lab {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(numel(shape_), fill) {}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  if (numel(shape) != data.size()) {
    throw DimensionError("tensor: shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::move(data);
  return t;
}

Tensor Tensor::scalar(double v) { return from_data({1}, {v}); }

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("tensor: axis " + std::to_string(axis) + " out of rank " +
                         std::to_string(shape_.size()));
  }
  return shape_[axis];
}

double Tensor::scalar_value() const {
  if (size() != 1) {
    throw DimensionError("tensor: expected scalar, got " + shape_str(shape_));
  }
  return data_[0];
}

void Tensor::ensure_grad() {
  if (grad_.size() != data_.size()) grad_.assign(data_.size(), 0.0);
}

void Tensor::zero_grad() {
  if (!grad_.empty()) grad_.assign(data_.size(), 0.0);
}

std::vector<double>& Tensor::grad() {
  ensure_grad();
  return grad_;
}

const std::vector<double>& Tensor::grad() const {
  if (grad_.size() != data_.size()) {
    throw DomainError("tensor: gradient not allocated");
  }
  return grad_;
}

void Tensor::check_finite(const std::string& where) const {
  for (double v : data_) {
    if (!std::isfinite(v)) {
      throw NumericError("non-finite value in " + where);
    }
  }
}

}  // namespace r2lab

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "r2lab/errors.hpp"

namespace r2lab {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major tensor of 64-bit floats with an optional gradient
/// buffer of the same shape. All training math runs at 64 bit; 32-bit
/// precision appears only as checkpoint storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);

  static Tensor from_data(Shape shape, std::vector<double> data);
  static Tensor scalar(double v);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const;
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Rank-2 element access.
  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  /// Value of a single-element tensor.
  double scalar_value() const;

  bool has_grad() const { return !grad_.empty(); }
  void ensure_grad();
  void zero_grad();
  void drop_grad() { grad_.clear(); }
  std::vector<double>& grad();
  const std::vector<double>& grad() const;

  /// Throws NumericError if any element is NaN or infinite.
  void check_finite(const std::string& where) const;

 private:
  Shape shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
};

}  // namespace r2lab

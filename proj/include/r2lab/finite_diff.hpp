// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

#include "r2lab/tensor.hpp"

namespace r2lab {

/// Central finite differences of a scalar function at x:
/// g_i = (f(x + eps e_i) - f(x - eps e_i)) / (2 eps), 64-bit throughout.
/// This is the verification oracle for every analytic gradient in the lab.
Tensor finite_diff(const std::function<double(const Tensor&)>& f, const Tensor& x,
                   double eps = 1e-5);

/// Scalar variant for single learnable parameters (step size, margin,
/// temperature).
double finite_diff_scalar(const std::function<double(double)>& f, double x, double eps = 1e-5);

/// Infinity-norm error between an analytic gradient and the oracle,
/// normalized by the larger gradient magnitude of the pair.
double grad_rel_error(const Tensor& analytic, const Tensor& oracle);
double grad_rel_error(double analytic, double oracle);

}  // namespace r2lab

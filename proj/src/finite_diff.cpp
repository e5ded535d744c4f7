// SPDX-License-Identifier: Apache-2.0
#include "r2lab/finite_diff.hpp"

#include <cmath>

namespace r2lab {

namespace {

double eval(const std::function<double(const Tensor&)>& f, const Tensor& x) {
  const double v = f(x);
  if (!std::isfinite(v)) throw NumericError("finite_diff: function returned non-finite value");
  return v;
}

}  // namespace

Tensor finite_diff(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps) {
  if (eps <= 0.0) throw DomainError("finite_diff: eps must be positive");
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + eps;
    const double hi = eval(f, probe);
    probe[i] = saved - eps;
    const double lo = eval(f, probe);
    probe[i] = saved;
    g[i] = (hi - lo) / (2.0 * eps);
  }
  return g;
}

double finite_diff_scalar(const std::function<double(double)>& f, double x, double eps) {
  if (eps <= 0.0) throw DomainError("finite_diff: eps must be positive");
  const double hi = f(x + eps);
  const double lo = f(x - eps);
  if (!std::isfinite(hi) || !std::isfinite(lo)) {
    throw NumericError("finite_diff: function returned non-finite value");
  }
  return (hi - lo) / (2.0 * eps);
}

double grad_rel_error(const Tensor& analytic, const Tensor& oracle) {
  if (!analytic.same_shape(oracle)) {
    throw DimensionError("grad_rel_error: shape mismatch " + shape_str(analytic.shape()) +
                         " vs " + shape_str(oracle.shape()));
  }
  double scale = 1e-8, err = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    scale = std::max({scale, std::fabs(analytic[i]), std::fabs(oracle[i])});
    err = std::max(err, std::fabs(analytic[i] - oracle[i]));
  }
  return err / scale;
}

double grad_rel_error(double analytic, double oracle) {
  const double scale = std::max({1e-8, std::fabs(analytic), std::fabs(oracle)});
  return std::fabs(analytic - oracle) / scale;
}

}  // namespace r2lab

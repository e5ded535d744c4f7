// SPDX-License-Identifier: Apache-2.0
#include "r2lab/quantizers.hpp"

#include <algorithm>
#include <cmath>

namespace r2lab {

std::string quant_method_name(QuantMethod m) {
  switch (m) {
    case QuantMethod::Ste: return "ste";
    case QuantMethod::Lsq: return "lsq";
    case QuantMethod::Ewgs: return "ewgs";
  }
  return "ste";
}

QuantMethod quant_method_from(const std::string& name) {
  if (name == "ste") return QuantMethod::Ste;
  if (name == "lsq") return QuantMethod::Lsq;
  if (name == "ewgs") return QuantMethod::Ewgs;
  throw ConfigError("unknown quantization method '" + name + "'");
}

void QuantState::validate() const {
  if (bits < 1 || bits > 8) throw DomainError("quant: bits must be in [1, 8]");
  if (step <= 0.0) throw DomainError("quant: step size must be positive");
  if (ewgs_delta < 0.0) throw DomainError("quant: ewgs delta must be >= 0");
}

double round_half_away(double x) { return std::round(x); }

Tensor fake_quant_weight(const Tensor& w, const QuantState& q) {
  q.validate();
  const double lo = -static_cast<double>(q.qn());
  const double hi = std::max(static_cast<double>(q.qp()), 0.0);
  Tensor out(w.shape());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double level = std::clamp(round_half_away(w[i] / q.step), lo, hi);
    out[i] = level * q.step;
  }
  return out;
}

Tensor ste_backward(const Tensor& upstream, const Tensor& w, const QuantState& q) {
  q.validate();
  if (!upstream.same_shape(w)) {
    throw DimensionError("ste_backward: gradient shape " + shape_str(upstream.shape()) +
                         " vs weights " + shape_str(w.shape()));
  }
  const double lo = -static_cast<double>(q.qn());
  const double hi = std::max(static_cast<double>(q.qp()), 0.0);
  Tensor out(w.shape());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double u = w[i] / q.step;
    out[i] = (u >= lo && u <= hi) ? upstream[i] : 0.0;
  }
  return out;
}

LsqGrads lsq_grads(const Tensor& upstream, const Tensor& w, const QuantState& q,
                   std::size_t n_weights) {
  q.validate();
  if (n_weights < 1) throw DomainError("lsq_grads: n_weights must be >= 1");
  if (!upstream.same_shape(w)) {
    throw DimensionError("lsq_grads: gradient shape " + shape_str(upstream.shape()) +
                         " vs weights " + shape_str(w.shape()));
  }
  const double lo = -static_cast<double>(q.qn());
  const double hi = std::max(static_cast<double>(q.qp()), 0.0);
  const double qp_for_scale = std::max(q.qp(), 1);
  const double g = 1.0 / std::sqrt(static_cast<double>(n_weights) * qp_for_scale);
  LsqGrads out;
  out.dw = Tensor(w.shape());
  double ds = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double u = w[i] / q.step;
    double dstep;
    if (u < lo) {
      dstep = lo;
    } else if (u > hi) {
      dstep = hi;
    } else {
      dstep = round_half_away(u) - u;
      out.dw[i] = upstream[i];
    }
    ds += upstream[i] * dstep;
  }
  out.ds = ds * g;
  return out;
}

Tensor pact_clip(const Tensor& x, double act_clip) {
  if (act_clip <= 0.0) throw DomainError("pact_clip: clip bound must be positive");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::clamp(x[i], 0.0, act_clip);
  return out;
}

PactGrads pact_clip_grads(const Tensor& upstream, const Tensor& x, double act_clip) {
  if (act_clip <= 0.0) throw DomainError("pact_clip: clip bound must be positive");
  if (!upstream.same_shape(x)) {
    throw DimensionError("pact_clip_grads: gradient shape " + shape_str(upstream.shape()) +
                         " vs input " + shape_str(x.shape()));
  }
  PactGrads out;
  out.dx = Tensor(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] >= act_clip) {
      out.dclip += upstream[i];
    } else if (x[i] > 0.0) {
      out.dx[i] = upstream[i];
    }
  }
  return out;
}

Tensor ewgs_scale(const Tensor& upstream, const Tensor& w, const Tensor& w_hat, double delta) {
  if (delta < 0.0) throw DomainError("ewgs_scale: delta must be >= 0");
  if (!upstream.same_shape(w) || !w.same_shape(w_hat)) {
    throw DimensionError("ewgs_scale: mismatched shapes");
  }
  Tensor out(w.shape());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double g = upstream[i];
    const double s = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
    out[i] = g * (1.0 + delta * s * (w[i] - w_hat[i]));
  }
  return out;
}

double init_step_statistical(const Tensor& w, int bits, bool* warned) {
  if (w.size() < 1) throw DomainError("init_step_statistical: empty tensor");
  if (bits < 1) throw DomainError("init_step_statistical: bits must be >= 1");
  double mean_abs = 0.0;
  for (double v : w.values()) mean_abs += std::fabs(v);
  mean_abs /= static_cast<double>(w.size());
  if (mean_abs == 0.0) {
    if (warned) *warned = true;
    return 1e-8;
  }
  const int qp = std::max((1 << (bits - 1)) - 1, 1);
  return 2.0 * mean_abs / std::sqrt(static_cast<double>(qp));
}

}  // namespace r2lab

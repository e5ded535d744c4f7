// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>

#include "r2lab/tensor.hpp"

namespace r2lab {

enum class QuantMethod { Ste, Lsq, Ewgs };

std::string quant_method_name(QuantMethod m);
QuantMethod quant_method_from(const std::string& name);

/// Per-layer fake-quantizer configuration. Signed symmetric grid with
/// Q_N = 2^{b-1}, Q_P = 2^{b-1} - 1.
struct QuantState {
  int bits = 8;
  double step = 0.0;        // s > 0 once initialized
  double act_clip = 6.0;    // trainable PACT bound
  double ewgs_delta = 0.1;
  bool step_warned_zero = false;

  int qn() const { return 1 << (bits - 1); }
  int qp() const { return (1 << (bits - 1)) - 1; }
  void validate() const;
};

/// Deterministic round-half-away-from-zero.
double round_half_away(double x);

/// w_hat = clamp(round(w/s), -Q_N, Q_P) * s elementwise.
Tensor fake_quant_weight(const Tensor& w, const QuantState& q);

/// Clipped straight-through estimator: upstream passes where w/s lies in
/// [-Q_N, Q_P], zero outside.
Tensor ste_backward(const Tensor& upstream, const Tensor& w, const QuantState& q);

struct LsqGrads {
  Tensor dw;
  double ds = 0.0;
};

/// Learnable-step gradients: dw via clipped STE; ds accumulates
/// (round(w/s) - w/s) in range and -Q_N / Q_P on the saturated branches,
/// scaled by 1/sqrt(n_weights * Q_P).
LsqGrads lsq_grads(const Tensor& upstream, const Tensor& w, const QuantState& q,
                   std::size_t n_weights);

/// y = clamp(x, 0, act_clip).
Tensor pact_clip(const Tensor& x, double act_clip);

struct PactGrads {
  Tensor dx;
  double dclip = 0.0;
};

/// dx passes on (0, act_clip); dclip gets 1 per saturated element.
PactGrads pact_clip_grads(const Tensor& upstream, const Tensor& x, double act_clip);

/// Elementwise g' = g (1 + delta sign(g) (w - w_hat)).
Tensor ewgs_scale(const Tensor& upstream, const Tensor& w, const Tensor& w_hat, double delta);

/// s = 2 mean|w| / sqrt(Q_P), Q_P floored at 1. All-zero weights fall
/// back to 1e-8 and set *warned.
double init_step_statistical(const Tensor& w, int bits, bool* warned = nullptr);

}  // namespace r2lab

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "r2lab/model.hpp"
#include "r2lab/tape.hpp"
#include "r2lab/tensor.hpp"

namespace r2lab {

enum class RegKind { None, Linf, Margin, SoftMinMax };

std::string reg_kind_name(RegKind kind);
RegKind reg_kind_from(const std::string& name);

/// Learnable per-layer regularizer state plus the global weight lambda.
/// Margin thresholds and temperatures are scalar tensors so the trainer
/// can update them with the same optimizer step as the weights.
struct RegState {
  static constexpr double kAlphaMin = 1e-3;

  RegKind kind = RegKind::None;
  double lambda = 0.01;
  std::map<std::string, Tensor> margin;  // layer -> scalar M
  std::map<std::string, Tensor> alpha;   // layer -> scalar temperature

  bool active() const { return kind != RegKind::None && lambda > 0.0; }
  /// Clamp every temperature to kAlphaMin; called after each optimizer step.
  void clamp_alpha();
};

/// Sum over layers of the largest absolute weight.
double linf_loss(const std::vector<const Tensor*>& weights);
/// Subgradient of max|w|: sign(w) on the argmax set, equal-split on ties.
Tensor linf_grad(const Tensor& w);

/// |M| plus the summed hinge excess of |w_i| over |M|.
double margin_loss(const Tensor& w, double m);
std::pair<Tensor, double> margin_grad(const Tensor& w, double m);

/// Soft range (s_max - s_min) + e^{-alpha}; exponents are shifted by the
/// hard extrema for stability, which leaves values and gradients
/// unchanged.
double smm_loss(const Tensor& w, double alpha);
std::pair<Tensor, double> smm_grad(const Tensor& w, double alpha);
/// Soft extrema themselves (for the limit diagnostics).
std::pair<double, double> smm_soft_extrema(const Tensor& w, double alpha);

/// Margin threshold init: twice the population standard deviation.
double init_margin(const Tensor& w);

/// Builds RegState for a model: one entry per conv/linear weight layer.
/// Margin thresholds follow the 2-sigma rule; temperatures start at
/// alpha_init.
RegState make_reg_state(RegKind kind, double lambda, double alpha_init, Model& model);

/// Untaped total regularization term (diagnostics/metrics path).
double reg_loss_value(const RegState& reg, Model& model);

/// Tapes task_loss + lambda * sum of per-layer penalties. weight_leaves
/// must come from the same tape (ForwardRecord). With lambda == 0 or kind
/// None the task loss value is returned unchanged.
Value total_loss(Tape& tape, Value task_loss, RegState& reg, Model& model,
                 const std::map<std::string, Value>& weight_leaves);

}  // namespace r2lab

// SPDX-License-Identifier: Apache-2.0
#include "r2lab/regularizers.hpp"

#include <algorithm>
#include <cmath>

namespace r2lab {

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void require_nonempty(const Tensor& w, const char* op) {
  if (w.size() == 0) throw DomainError(std::string(op) + ": empty weight tensor");
}

}  // namespace

std::string reg_kind_name(RegKind kind) {
  switch (kind) {
    case RegKind::None: return "none";
    case RegKind::Linf: return "linf";
    case RegKind::Margin: return "margin";
    case RegKind::SoftMinMax: return "softminmax";
  }
  return "none";
}

RegKind reg_kind_from(const std::string& name) {
  if (name == "none") return RegKind::None;
  if (name == "linf") return RegKind::Linf;
  if (name == "margin") return RegKind::Margin;
  if (name == "softminmax" || name == "smm") return RegKind::SoftMinMax;
  throw ConfigError("unknown regularizer kind '" + name + "'");
}

void RegState::clamp_alpha() {
  for (auto& [name, a] : alpha) {
    if (a[0] < kAlphaMin) a[0] = kAlphaMin;
  }
}

double linf_loss(const std::vector<const Tensor*>& weights) {
  if (weights.empty()) throw DomainError("linf_loss: empty layer list");
  double total = 0.0;
  for (const Tensor* w : weights) {
    require_nonempty(*w, "linf_loss");
    double mx = 0.0;
    for (double v : w->values()) mx = std::max(mx, std::fabs(v));
    total += mx;
  }
  return total;
}

Tensor linf_grad(const Tensor& w) {
  require_nonempty(w, "linf_grad");
  double mx = 0.0;
  for (double v : w.values()) mx = std::max(mx, std::fabs(v));
  Tensor g(w.shape());
  if (mx == 0.0) return g;  // all-zero tensor: sign(0) mass is zero
  std::size_t ties = 0;
  for (double v : w.values())
    if (std::fabs(v) == mx) ++ties;
  const double share = 1.0 / static_cast<double>(ties);
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (std::fabs(w[i]) == mx) g[i] = sign(w[i]) * share;
  }
  return g;
}

double margin_loss(const Tensor& w, double m) {
  require_nonempty(w, "margin_loss");
  if (!std::isfinite(m)) throw DomainError("margin_loss: non-finite margin");
  const double am = std::fabs(m);
  double loss = am;
  for (double v : w.values()) loss += std::max(std::fabs(v) - am, 0.0);
  return loss;
}

std::pair<Tensor, double> margin_grad(const Tensor& w, double m) {
  require_nonempty(w, "margin_grad");
  const double am = std::fabs(m);
  Tensor dw(w.shape());
  std::size_t outside = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (std::fabs(w[i]) > am) {
      dw[i] = sign(w[i]);
      ++outside;
    }
  }
  // d/dM [|M| + sum max(|w|-|M|,0)] = sign(M) (1 - #outside); 0 at M = 0.
  const double dm = sign(m) * (1.0 - static_cast<double>(outside));
  return {std::move(dw), dm};
}

namespace {

struct SoftSide {
  std::vector<double> p;  // softmax weights
  double value = 0.0;     // weighted mean of w
  double var = 0.0;       // weighted variance of w
};

// dir = +1 for the soft max (exponents alpha (w - max)), -1 for the soft
// min (exponents -alpha (w - min)).
SoftSide soft_side(const Tensor& w, double alpha, double dir) {
  const auto& v = w.values();
  double ext = v[0];
  for (double x : v) ext = dir > 0 ? std::max(ext, x) : std::min(ext, x);
  SoftSide s;
  s.p.resize(v.size());
  double z = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    s.p[i] = std::exp(dir * alpha * (v[i] - ext));
    z += s.p[i];
  }
  double mean = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    s.p[i] /= z;
    mean += s.p[i] * v[i];
  }
  s.value = mean;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double d = v[i] - mean;
    s.var += s.p[i] * d * d;
  }
  return s;
}

}  // namespace

std::pair<double, double> smm_soft_extrema(const Tensor& w, double alpha) {
  require_nonempty(w, "smm_loss");
  if (alpha < 0.0) throw DomainError("smm: alpha must be >= 0");
  const SoftSide hi = soft_side(w, alpha, +1.0);
  const SoftSide lo = soft_side(w, alpha, -1.0);
  return {lo.value, hi.value};
}

double smm_loss(const Tensor& w, double alpha) {
  const auto [s_min, s_max] = smm_soft_extrema(w, alpha);
  return (s_max - s_min) + std::exp(-alpha);
}

std::pair<Tensor, double> smm_grad(const Tensor& w, double alpha) {
  require_nonempty(w, "smm_grad");
  if (alpha < 0.0) throw DomainError("smm: alpha must be >= 0");
  const SoftSide hi = soft_side(w, alpha, +1.0);
  const SoftSide lo = soft_side(w, alpha, -1.0);
  Tensor dw(w.shape());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double dmax = hi.p[i] * (1.0 + alpha * (w[i] - hi.value));
    const double dmin = lo.p[i] * (1.0 - alpha * (w[i] - lo.value));
    dw[i] = dmax - dmin;
  }
  const double dalpha = hi.var + lo.var - std::exp(-alpha);
  return {std::move(dw), dalpha};
}

double init_margin(const Tensor& w) {
  if (w.size() < 2) throw DomainError("init_margin: need at least 2 weights");
  double mean = 0.0;
  for (double v : w.values()) mean += v;
  mean /= static_cast<double>(w.size());
  double var = 0.0;
  for (double v : w.values()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(w.size());
  return 2.0 * std::sqrt(var);
}

RegState make_reg_state(RegKind kind, double lambda, double alpha_init, Model& model) {
  if (lambda < 0.0) throw DomainError("reg: lambda must be >= 0");
  RegState reg;
  reg.kind = kind;
  reg.lambda = lambda;
  if (kind == RegKind::Margin) {
    for (const ParamRef& p : model.weight_params()) {
      reg.margin.emplace(p.layer, Tensor::scalar(init_margin(*p.tensor)));
    }
  } else if (kind == RegKind::SoftMinMax) {
    const double a0 = std::max(alpha_init, RegState::kAlphaMin);
    for (const ParamRef& p : model.weight_params()) {
      reg.alpha.emplace(p.layer, Tensor::scalar(a0));
    }
  }
  return reg;
}

double reg_loss_value(const RegState& reg, Model& model) {
  if (!reg.active()) return 0.0;
  double total = 0.0;
  for (const ParamRef& p : model.weight_params()) {
    switch (reg.kind) {
      case RegKind::Linf:
        total += linf_loss({p.tensor});
        break;
      case RegKind::Margin:
        total += margin_loss(*p.tensor, reg.margin.at(p.layer)[0]);
        break;
      case RegKind::SoftMinMax:
        total += smm_loss(*p.tensor, reg.alpha.at(p.layer)[0]);
        break;
      case RegKind::None:
        break;
    }
  }
  return total;
}

namespace {

Value tape_linf(Tape& tape, Value w_leaf) {
  const Tensor& w = tape.value(w_leaf);
  auto back = [](const Tensor&, const std::vector<double>& dout,
                 const std::vector<const Tensor*>& in,
                 const std::vector<std::vector<double>*>& din) {
    if (!din[0]) return;
    const Tensor g = linf_grad(*in[0]);
    for (std::size_t i = 0; i < g.size(); ++i) (*din[0])[i] += dout[0] * g[i];
  };
  return tape.custom("linf", {w_leaf}, Tensor::scalar(linf_loss({&w})), back);
}

Value tape_margin(Tape& tape, Value w_leaf, Value m_leaf) {
  const Tensor& w = tape.value(w_leaf);
  const double m = tape.value(m_leaf).scalar_value();
  auto back = [](const Tensor&, const std::vector<double>& dout,
                 const std::vector<const Tensor*>& in,
                 const std::vector<std::vector<double>*>& din) {
    const auto [dw, dm] = margin_grad(*in[0], in[1]->scalar_value());
    if (din[0]) {
      for (std::size_t i = 0; i < dw.size(); ++i) (*din[0])[i] += dout[0] * dw[i];
    }
    if (din[1]) (*din[1])[0] += dout[0] * dm;
  };
  return tape.custom("margin", {w_leaf, m_leaf}, Tensor::scalar(margin_loss(w, m)), back);
}

Value tape_smm(Tape& tape, Value w_leaf, Value a_leaf) {
  const Tensor& w = tape.value(w_leaf);
  const double alpha = tape.value(a_leaf).scalar_value();
  auto back = [](const Tensor&, const std::vector<double>& dout,
                 const std::vector<const Tensor*>& in,
                 const std::vector<std::vector<double>*>& din) {
    const auto [dw, da] = smm_grad(*in[0], in[1]->scalar_value());
    if (din[0]) {
      for (std::size_t i = 0; i < dw.size(); ++i) (*din[0])[i] += dout[0] * dw[i];
    }
    if (din[1]) (*din[1])[0] += dout[0] * da;
  };
  return tape.custom("softminmax", {w_leaf, a_leaf}, Tensor::scalar(smm_loss(w, alpha)), back);
}

}  // namespace

Value total_loss(Tape& tape, Value task_loss, RegState& reg, Model& model,
                 const std::map<std::string, Value>& weight_leaves) {
  if (!reg.active()) return task_loss;
  Value acc{};
  for (const ParamRef& p : model.weight_params()) {
    const auto it = weight_leaves.find(p.layer);
    if (it == weight_leaves.end()) {
      throw DomainError("total_loss: no weight leaf recorded for layer '" + p.layer + "'");
    }
    Value term{};
    switch (reg.kind) {
      case RegKind::Linf:
        term = tape_linf(tape, it->second);
        break;
      case RegKind::Margin:
        term = tape_margin(tape, it->second, tape.param(reg.margin.at(p.layer)));
        break;
      case RegKind::SoftMinMax:
        term = tape_smm(tape, it->second, tape.param(reg.alpha.at(p.layer)));
        break;
      case RegKind::None:
        break;
    }
    acc = acc.valid() ? tape.add(acc, term) : term;
  }
  return tape.add(task_loss, tape.scale(acc, reg.lambda));
}

}  // namespace r2lab

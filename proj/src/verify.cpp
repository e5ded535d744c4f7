// SPDX-License-Identifier: Apache-2.0
#include "r2lab/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>

#include "r2lab/finite_diff.hpp"
#include "r2lab/model.hpp"
#include "r2lab/palettizers.hpp"
#include "r2lab/quantizers.hpp"
#include "r2lab/regularizers.hpp"
#include "r2lab/rng.hpp"
#include "r2lab/tape.hpp"

namespace r2lab {

namespace {

std::string fmt_err(double worst) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "max rel err %.3e", worst);
  return buf;
}

SuiteResult make_result(const std::string& name, double worst, double tol) {
  return {name, worst <= tol, fmt_err(worst) + (worst <= tol ? "" : " > tol")};
}

Tensor random_tensor(Rng& rng, const Shape& shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// weights with a unique abs-max: gap to the runner-up at least `gap`
Tensor linf_safe_tensor(Rng& rng, std::size_t n, double gap) {
  while (true) {
    Tensor w({n});
    for (double& v : w.values()) v = rng.uniform(-1.0, 1.0);
    double top = 0.0, second = 0.0;
    for (double v : w.values()) {
      const double a = std::fabs(v);
      if (a > top) {
        second = top;
        top = a;
      } else if (a > second) {
        second = a;
      }
    }
    if (top - second >= gap) return w;
  }
}

double suite_linf(Rng& rng, int instances) {
  double worst = 0.0;
  for (int i = 0; i < instances; ++i) {
    const Tensor w = linf_safe_tensor(rng, 24, 1e-3);
    const Tensor analytic = linf_grad(w);
    const Tensor oracle = finite_diff([](const Tensor& t) { return linf_loss({&t}); }, w);
    worst = std::max(worst, grad_rel_error(analytic, oracle));
  }
  return worst;
}

double suite_margin(Rng& rng, int instances, bool mutate_sign, double* worst_dm) {
  double worst = 0.0;
  *worst_dm = 0.0;
  for (int i = 0; i < instances; ++i) {
    // keep |w| at least 1e-3 away from the hinge at |M|, and M away from 0
    const double m = rng.uniform(0.25, 0.75);
    Tensor w({20});
    for (double& v : w.values()) {
      do {
        v = rng.uniform(-1.0, 1.0);
      } while (std::fabs(std::fabs(v) - m) < 1e-3);
    }
    auto [dw, dm] = margin_grad(w, m);
    if (mutate_sign) {
      for (double& v : dw.values()) v = -v;
    }
    const Tensor ow = finite_diff([m](const Tensor& t) { return margin_loss(t, m); }, w);
    const double om = finite_diff_scalar([&w](double mm) { return margin_loss(w, mm); }, m);
    worst = std::max(worst, grad_rel_error(dw, ow));
    *worst_dm = std::max(*worst_dm, grad_rel_error(dm, om));
  }
  return worst;
}

double suite_smm(Rng& rng, int instances, double* worst_da) {
  double worst = 0.0;
  *worst_da = 0.0;
  for (int i = 0; i < instances; ++i) {
    const double alpha = rng.uniform(0.1, 5.0);
    const Tensor w = random_tensor(rng, {16});
    const auto [dw, da] = smm_grad(w, alpha);
    const Tensor ow = finite_diff([alpha](const Tensor& t) { return smm_loss(t, alpha); }, w);
    const double oa = finite_diff_scalar([&w](double a) { return smm_loss(w, a); }, alpha);
    worst = std::max(worst, grad_rel_error(dw, ow));
    *worst_da = std::max(*worst_da, grad_rel_error(da, oa));
  }
  return worst;
}

// Oracle for the learnable-step gradient: freeze the rounding residual of
// every in-range element at the base step, giving a surrogate that is
// smooth in s and whose value and derivative at the base step equal the
// quantizer's straight-through convention. Elements near a clip-branch
// switch are excluded by construction.
double suite_lsq(Rng& rng, int instances) {
  double worst = 0.0;
  for (int i = 0; i < instances; ++i) {
    QuantState q;
    q.bits = (i % 3 == 0) ? 2 : ((i % 3 == 1) ? 4 : 8);
    q.step = rng.uniform(0.05, 0.2);
    const double lo = -static_cast<double>(q.qn());
    const double hi = static_cast<double>(q.qp());
    Tensor w({24});
    for (double& v : w.values()) {
      do {
        v = rng.uniform(-1.5, 1.5);
      } while (std::fabs(v / q.step - lo) < 1e-3 || std::fabs(v / q.step - hi) < 1e-3);
    }
    Tensor up = random_tensor(rng, {24});
    const LsqGrads g = lsq_grads(up, w, q, w.size());
    // residuals frozen at the base step
    std::vector<double> residual(w.size(), 0.0);
    std::vector<bool> in_range(w.size(), false);
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double u = w[j] / q.step;
      if (u >= lo && u <= hi) {
        in_range[j] = true;
        residual[j] = round_half_away(u) - u;
      }
    }
    auto surrogate = [&](double s) {
      double acc = 0.0;
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double u = std::clamp(w[j] / s, lo, hi);
        acc += up[j] * s * (u + (in_range[j] ? residual[j] : 0.0));
      }
      return acc;
    };
    const double gscale = 1.0 / std::sqrt(static_cast<double>(w.size()) *
                                          std::max(q.qp(), 1));
    const double oracle = gscale * finite_diff_scalar(surrogate, q.step);
    worst = std::max(worst, grad_rel_error(g.ds, oracle));
  }
  return worst;
}

double suite_pact(Rng& rng, int instances, double* worst_dclip) {
  double worst = 0.0;
  *worst_dclip = 0.0;
  for (int i = 0; i < instances; ++i) {
    const double clip = rng.uniform(0.5, 1.5);
    Tensor x({20});
    for (double& v : x.values()) {
      do {
        v = rng.uniform(-1.0, 2.5);
      } while (std::fabs(v) < 1e-3 || std::fabs(v - clip) < 1e-3);
    }
    const Tensor up = random_tensor(rng, {20});
    const PactGrads g = pact_clip_grads(up, x, clip);
    auto f = [&](const Tensor& t) {
      const Tensor y = pact_clip(t, clip);
      double acc = 0.0;
      for (std::size_t j = 0; j < y.size(); ++j) acc += up[j] * y[j];
      return acc;
    };
    const Tensor ox = finite_diff(f, x);
    const double oclip = finite_diff_scalar(
        [&](double c) {
          const Tensor y = pact_clip(x, c);
          double acc = 0.0;
          for (std::size_t j = 0; j < y.size(); ++j) acc += up[j] * y[j];
          return acc;
        },
        clip);
    worst = std::max(worst, grad_rel_error(g.dx, ox));
    *worst_dclip = std::max(*worst_dclip, grad_rel_error(g.dclip, oclip));
  }
  return worst;
}

double suite_dkm(Rng& rng, int instances) {
  double worst = 0.0;
  for (int i = 0; i < instances; ++i) {
    const std::size_t d = (i % 2) + 1;
    const std::size_t k = (i % 3 == 0) ? 4 : 2;
    const std::size_t n_weights = 6 * d + (i % 2);  // exercises padding on odd sizes
    const double tau = rng.uniform(0.05, 0.5);
    const Tensor w = random_tensor(rng, {n_weights});
    std::vector<double> codebook(k * d);
    for (double& c : codebook) c = rng.uniform(-1.0, 1.0);
    const Tensor up = random_tensor(rng, {n_weights});

    const DkmForward fwd = dkm_forward(w, codebook, k, d, tau);
    const Tensor analytic = dkm_backward(w, codebook, fwd, k, d, tau, up);
    auto f = [&](const Tensor& t) {
      const DkmForward r = dkm_forward(t, codebook, k, d, tau);
      double acc = 0.0;
      for (std::size_t j = 0; j < r.reconstructed.size(); ++j) {
        acc += up[j] * r.reconstructed[j];
      }
      return acc;
    };
    worst = std::max(worst, grad_rel_error(analytic, finite_diff(f, w)));
  }
  return worst;
}

double suite_matmul(Rng& rng, int instances) {
  double worst = 0.0;
  for (int i = 0; i < instances; ++i) {
    Tensor a = random_tensor(rng, {5, 4});
    Tensor b = random_tensor(rng, {4, 3});
    const Tensor up = random_tensor(rng, {5, 3});
    Tape tape;
    Value va = tape.param(a);
    Value vb = tape.param(b);
    Value prod = tape.matmul(va, vb);
    Value loss = tape.sum(tape.mul(prod, tape.input(up)));
    a.zero_grad();
    b.zero_grad();
    tape.backward(loss);
    auto f_a = [&](const Tensor& t) {
      Tape t2;
      Value p = t2.matmul(t2.input(t), t2.input(b));
      return t2.value(t2.sum(t2.mul(p, t2.input(up)))).scalar_value();
    };
    auto f_b = [&](const Tensor& t) {
      Tape t2;
      Value p = t2.matmul(t2.input(a), t2.input(t));
      return t2.value(t2.sum(t2.mul(p, t2.input(up)))).scalar_value();
    };
    worst = std::max(worst, grad_rel_error(Tensor::from_data(a.shape(), a.grad()),
                                           finite_diff(f_a, a)));
    worst = std::max(worst, grad_rel_error(Tensor::from_data(b.shape(), b.grad()),
                                           finite_diff(f_b, b)));
  }
  return worst;
}

double suite_conv(Rng& rng, int instances) {
  double worst = 0.0;
  for (int i = 0; i < instances; ++i) {
    const int stride = (i % 2) + 1;
    const int pad = i % 2;
    Tensor x = random_tensor(rng, {1, 2, 5, 5});
    Tensor w = random_tensor(rng, {3, 2, 3, 3});
    Tape probe;
    const Tensor up = random_tensor(
        rng, probe.value(probe.conv2d(probe.input(x), probe.input(w), stride, pad)).shape());
    Tape tape;
    Value vx = tape.param(x);
    Value vw = tape.param(w);
    Value y = tape.conv2d(vx, vw, stride, pad);
    Value loss = tape.sum(tape.mul(y, tape.input(up)));
    x.zero_grad();
    w.zero_grad();
    tape.backward(loss);
    auto f_x = [&](const Tensor& t) {
      Tape t2;
      Value p = t2.conv2d(t2.input(t), t2.input(w), stride, pad);
      return t2.value(t2.sum(t2.mul(p, t2.input(up)))).scalar_value();
    };
    auto f_w = [&](const Tensor& t) {
      Tape t2;
      Value p = t2.conv2d(t2.input(x), t2.input(t), stride, pad);
      return t2.value(t2.sum(t2.mul(p, t2.input(up)))).scalar_value();
    };
    worst = std::max(worst, grad_rel_error(Tensor::from_data(x.shape(), x.grad()),
                                           finite_diff(f_x, x)));
    worst = std::max(worst, grad_rel_error(Tensor::from_data(w.shape(), w.grad()),
                                           finite_diff(f_w, w)));
  }
  return worst;
}

double suite_softmax_ce(Rng& rng, int instances) {
  double worst = 0.0;
  for (int i = 0; i < instances; ++i) {
    Tensor logits = random_tensor(rng, {4, 6}, -2.0, 2.0);
    std::vector<int> labels(4);
    for (int& l : labels) l = static_cast<int>(rng.index(6));
    Tape tape;
    Value v = tape.param(logits);
    Value loss = tape.softmax_ce(v, labels);
    logits.zero_grad();
    tape.backward(loss);
    auto f = [&](const Tensor& t) {
      Tape t2;
      return t2.value(t2.softmax_ce(t2.input(t), labels)).scalar_value();
    };
    worst = std::max(worst, grad_rel_error(Tensor::from_data(logits.shape(), logits.grad()),
                                           finite_diff(f, logits)));
  }
  return worst;
}

// task + lambda * penalty through one tape, checked against the oracle on
// a single weight tensor
double suite_composite(Rng& rng, int instances) {
  double worst = 0.0;
  for (int i = 0; i < instances / 10 + 1; ++i) {
    Model model = Model::mlp({6, 5, 3});
    model.init_params(rng.next_u64());
    RegState reg = make_reg_state(RegKind::Margin, 0.01, 0.1, model);
    Tensor images = random_tensor(rng, {4, 1, 1, 6}, 0.0, 1.0);
    std::vector<int> labels(4);
    for (int& l : labels) l = static_cast<int>(rng.index(3));

    auto loss_at = [&](Model& mdl, RegState& rg) {
      Tape tape;
      ForwardRecord rec;
      Value x = tape.input(images);
      Value logits = mdl.forward(tape, x, nullptr, &rec);
      Value task = tape.softmax_ce(logits, labels);
      return tape.value(total_loss(tape, task, rg, mdl, rec.weight_leaf)).scalar_value();
    };

    Tensor& w0 = model.layers()[0].weight;
    {
      Tape tape;
      ForwardRecord rec;
      Value x = tape.input(images);
      Value logits = model.forward(tape, x, nullptr, &rec);
      Value task = tape.softmax_ce(logits, labels);
      Value total = total_loss(tape, task, reg, model, rec.weight_leaf);
      for (const ParamRef& p : model.parameters()) p.tensor->zero_grad();
      tape.backward(total);
    }
    const Tensor analytic = Tensor::from_data(w0.shape(), w0.grad());
    const Tensor base = w0;
    auto f = [&](const Tensor& t) {
      Model probe = model;
      probe.layers()[0].weight = t;
      RegState rg = reg;
      return loss_at(probe, rg);
    };
    worst = std::max(worst, grad_rel_error(analytic, finite_diff(f, base)));
    (void)base;
  }
  return worst;
}

}  // namespace

std::vector<SuiteResult> run_grad_suite(const GradSuiteOptions& opts) {
  Rng rng(opts.seed);
  std::vector<SuiteResult> out;
  double aux = 0.0;

  out.push_back(make_result("grad.linf.dw", suite_linf(rng, opts.instances), 1e-5));
  const double margin_dw = suite_margin(rng, opts.instances, opts.mutate_margin_sign, &aux);
  out.push_back(make_result("grad.margin.dw", margin_dw, 1e-5));
  out.push_back(make_result("grad.margin.dm", aux, 1e-5));
  const double smm_dw = suite_smm(rng, opts.instances, &aux);
  out.push_back(make_result("grad.softminmax.dw", smm_dw, 1e-5));
  out.push_back(make_result("grad.softminmax.dalpha", aux, 1e-5));
  out.push_back(make_result("grad.lsq.dstep", suite_lsq(rng, opts.instances), 1e-5));
  const double pact_dx = suite_pact(rng, opts.instances, &aux);
  out.push_back(make_result("grad.pact.dx", pact_dx, 1e-5));
  out.push_back(make_result("grad.pact.dclip", aux, 1e-5));
  out.push_back(make_result("grad.dkm.dw", suite_dkm(rng, opts.instances), 1e-4));
  out.push_back(make_result("grad.matmul", suite_matmul(rng, opts.instances), 1e-5));
  out.push_back(make_result("grad.conv2d", suite_conv(rng, opts.instances), 1e-5));
  out.push_back(make_result("grad.softmax_ce", suite_softmax_ce(rng, opts.instances), 1e-5));
  out.push_back(make_result("grad.composite_total_loss", suite_composite(rng, opts.instances),
                            1e-5));
  return out;
}

std::vector<SuiteResult> run_limits_suite(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SuiteResult> out;

  // soft-min-max approaches hard range monotonically in the temperature
  {
    const double grid[] = {0.0, 1.0, 5.0, 20.0, 50.0};
    double worst_final = 0.0;
    bool monotone = true;
    for (int i = 0; i < 100; ++i) {
      // bulk in a narrow band with unique extrema pushed well clear of it;
      // the softmax at temperature 50 needs ~0.35 of separation before the
      // runner-up weight e^{-50 gap} drops below the 1e-6 budget
      Tensor w({32});
      for (double& v : w.values()) v = rng.uniform(-0.1, 0.1);
      double mn = w[1], mx = w[1];
      for (std::size_t j = 1; j < w.size(); ++j) {
        mn = std::min(mn, w[j]);
        mx = std::max(mx, w[j]);
      }
      w[0] = mn - rng.uniform(0.4, 0.6);
      w[w.size() - 1] = mx + rng.uniform(0.4, 0.6);
      const double range = w[w.size() - 1] - w[0];
      double prev_gap = 0.0;
      for (int gi = 0; gi < 5; ++gi) {
        const double a = grid[gi];
        const double gap = (range + std::exp(-a)) - smm_loss(w, a);
        if (gap < -1e-12) monotone = false;
        if (gi > 0 && gap > prev_gap + 1e-12) monotone = false;
        prev_gap = gap;
      }
      worst_final = std::max(worst_final,
                             std::fabs(smm_loss(w, 50.0) - (range + std::exp(-50.0))));
    }
    out.push_back(make_result("limits.smm.final_gap", worst_final, 1e-6));
    out.push_back({"limits.smm.monotone", monotone,
                   monotone ? "gap non-increasing over the temperature grid"
                            : "gap increased somewhere on the grid"});
  }

  // margin with M = 0 degenerates to the L1 norm
  {
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      Tensor w({40});
      for (double& v : w.values()) v = rng.uniform(-2.0, 2.0);
      double l1 = 0.0;
      for (double v : w.values()) l1 += std::fabs(v);
      worst = std::max(worst, std::fabs(margin_loss(w, 0.0) - l1));
    }
    out.push_back(make_result("limits.margin.l1_degeneracy", worst, 1e-12));
  }
  return out;
}

std::vector<SuiteResult> run_palette_suite(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SuiteResult> out;

  // hard limit: soft assignments at tau = 1e-6 match Lloyd exactly
  {
    bool index_ok = true;
    double worst_centroid = 0.0;
    const std::size_t ks[] = {2, 4, 16};
    for (int i = 0; i < 100; ++i) {
      const std::size_t k = ks[i % 3];
      const std::size_t n = k * 4;
      Groups groups;
      groups.dim = 1;
      groups.count = n;
      groups.data.resize(n);
      std::vector<double> codebook(k);
      for (std::size_t j = 0; j < k; ++j) {
        codebook[j] = static_cast<double>(j) * 0.5 + rng.uniform(0.0, 0.05);
      }
      std::vector<std::uint32_t> expect(n);
      for (std::size_t g = 0; g < n; ++g) {
        const std::size_t home = g % k;  // every centroid keeps members
        expect[g] = static_cast<std::uint32_t>(home);
        groups.data[g] = codebook[home] + rng.uniform(-1e-3, 1e-3);
      }
      const DkmIterate it = dkm_iterate(groups, codebook, k, 1e-6);
      // Lloyd step on the same inputs
      std::vector<double> sums(k, 0.0);
      std::vector<std::size_t> counts(k, 0);
      for (std::size_t g = 0; g < n; ++g) {
        std::size_t best = 0;
        double best_d = std::fabs(groups.data[g] - codebook[0]);
        for (std::size_t j = 1; j < k; ++j) {
          const double dd = std::fabs(groups.data[g] - codebook[j]);
          if (dd < best_d) {
            best_d = dd;
            best = j;
          }
        }
        if (best != expect[g]) index_ok = false;
        sums[best] += groups.data[g];
        counts[best]++;
      }
      for (std::size_t g = 0; g < n; ++g) {
        std::size_t argmax = 0;
        for (std::size_t j = 1; j < k; ++j) {
          if (it.attention[g * k + j] > it.attention[g * k + argmax]) argmax = j;
        }
        if (argmax != expect[g]) index_ok = false;
      }
      for (std::size_t j = 0; j < k; ++j) {
        const double lloyd = sums[j] / static_cast<double>(counts[j]);
        worst_centroid = std::max(worst_centroid, std::fabs(lloyd - it.codebook[j]));
      }
    }
    out.push_back({"palette.dkm_lloyd.indices", index_ok,
                   index_ok ? "argmax assignments match Lloyd exactly"
                            : "assignment mismatch"});
    out.push_back(make_result("palette.dkm_lloyd.centroids", worst_centroid, 1e-12));
  }

  // attention rows are stochastic
  {
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
      Tensor w({17});
      for (double& v : w.values()) v = rng.uniform(-1.0, 1.0);
      const Groups g = group_weights(w, 1);
      std::vector<double> codebook = {-0.5, -0.1, 0.2, 0.7};
      const auto attn = dkm_attention(g, codebook, 4, 0.1);
      for (std::size_t r = 0; r < g.count; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < 4; ++j) s += attn[r * 4 + j];
        worst = std::max(worst, std::fabs(s - 1.0));
      }
    }
    out.push_back(make_result("palette.attention.row_sums", worst, 1e-12));
  }

  // Lloyd SSE is asserted non-increasing inside kmeans_fit
  {
    bool ok = true;
    std::string detail = "SSE non-increasing on 50 random fits";
    for (int i = 0; i < 50 && ok; ++i) {
      Tensor w({64});
      for (double& v : w.values()) v = rng.uniform(-1.0, 1.0);
      try {
        kmeans_fit(group_weights(w, 1), 8, 30, 1e-12, rng.next_u64());
      } catch (const NumericError& e) {
        ok = false;
        detail = e.what();
      }
    }
    out.push_back({"palette.kmeans.sse_monotone", ok, detail});
  }
  return out;
}

bool all_passed(const std::vector<SuiteResult>& results) {
  return std::all_of(results.begin(), results.end(),
                     [](const SuiteResult& r) { return r.pass; });
}

}  // namespace r2lab

// SPDX-License-Identifier: Apache-2.0
#include "r2lab/tape.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "r2lab/runtime.hpp"

namespace r2lab {

namespace {

// C[m x n] += A[m x k] * B[k x n], rows of C partitioned across workers.
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n) {
  parallel_for(0, m, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      double* ci = c + i * n;
      const double* ai = a + i * k;
      for (std::size_t l = 0; l < k; ++l) {
        const double ail = ai[l];
        if (ail == 0.0) continue;
        const double* bl = b + l * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += ail * bl[j];
      }
    }
  });
}

// dA[m x k] += dC[m x n] * B^T, i.e. dA[i,l] += dot(dC[i,:], B[l,:]).
void gemm_nt(const double* dc, const double* b, double* da, std::size_t m, std::size_t k,
             std::size_t n) {
  parallel_for(0, m, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const double* dci = dc + i * n;
      double* dai = da + i * k;
      for (std::size_t l = 0; l < k; ++l) {
        const double* bl = b + l * n;
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += dci[j] * bl[j];
        dai[l] += acc;
      }
    }
  });
}

// dB[k x n] += A^T * dC, i.e. dB[l,j] += sum_i A[i,l] * dC[i,j].
void gemm_tn(const double* a, const double* dc, double* db, std::size_t m, std::size_t k,
             std::size_t n) {
  parallel_for(0, k, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* ai = a + i * k;
      const double* dci = dc + i * n;
      for (std::size_t l = lo; l < hi; ++l) {
        const double ail = ai[l];
        if (ail == 0.0) continue;
        double* dbl = db + l * n;
        for (std::size_t j = 0; j < n; ++j) dbl[j] += ail * dci[j];
      }
    }
  });
}

struct ConvDims {
  std::size_t n, c, h, w, f, kh, kw, ho, wo;
  int stride, pad;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
  if (x.rank() != 4 || w.rank() != 4) {
    throw DimensionError("conv2d: expected NCHW input and FCKK kernel, got " +
                         shape_str(x.shape()) + " and " + shape_str(w.shape()));
  }
  ConvDims d;
  d.n = x.extent(0);
  d.c = x.extent(1);
  d.h = x.extent(2);
  d.w = x.extent(3);
  d.f = w.extent(0);
  d.kh = w.extent(2);
  d.kw = w.extent(3);
  d.stride = stride;
  d.pad = pad;
  if (w.extent(1) != d.c) {
    throw DimensionError("conv2d: channel mismatch " + shape_str(x.shape()) + " vs " +
                         shape_str(w.shape()));
  }
  if (stride < 1 || pad < 0) throw DomainError("conv2d: stride must be >= 1 and pad >= 0");
  const std::size_t ph = d.h + 2 * static_cast<std::size_t>(pad);
  const std::size_t pw = d.w + 2 * static_cast<std::size_t>(pad);
  if (d.kh > ph || d.kw > pw) {
    throw DimensionError("conv2d: kernel " + shape_str(w.shape()) +
                         " larger than padded input " + shape_str(x.shape()));
  }
  d.ho = (ph - d.kh) / static_cast<std::size_t>(stride) + 1;
  d.wo = (pw - d.kw) / static_cast<std::size_t>(stride) + 1;
  return d;
}

}  // namespace

std::size_t Tape::check(Value v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw IndexError("tape: invalid value handle");
  return v.id;
}

bool Tape::any_needs_grad(const std::vector<std::size_t>& ids) const {
  return std::any_of(ids.begin(), ids.end(), [&](std::size_t i) { return nodes_[i].needs_grad; });
}

Value Tape::push(std::string name, std::vector<std::size_t> inputs, Tensor out,
                 CustomBackward back) {
  out.check_finite(name);
  Node node;
  node.name = std::move(name);
  node.inputs = std::move(inputs);
  node.needs_grad = any_needs_grad(node.inputs);
  node.out = std::move(out);
  node.back = std::move(back);
  nodes_.push_back(std::move(node));
  return Value{nodes_.size() - 1};
}

Value Tape::param(Tensor& t) {
  t.check_finite("param");
  Node node;
  node.name = "param";
  node.out = t;
  node.external = &t;
  node.needs_grad = true;
  nodes_.push_back(std::move(node));
  return Value{nodes_.size() - 1};
}

Value Tape::input(Tensor t) {
  t.check_finite("input");
  Node node;
  node.name = "input";
  node.out = std::move(t);
  node.needs_grad = false;
  nodes_.push_back(std::move(node));
  return Value{nodes_.size() - 1};
}

Value Tape::matmul(Value a, Value b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (ta.rank() != 2 || tb.rank() != 2 || ta.extent(1) != tb.extent(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(ta.shape()) + " and " +
                         shape_str(tb.shape()));
  }
  const std::size_t m = ta.extent(0), k = ta.extent(1), n = tb.extent(1);
  Tensor out({m, n});
  gemm(ta.data(), tb.data(), out.data(), m, k, n);
  auto back = [m, k, n](const Tensor&, const std::vector<double>& dc,
                        const std::vector<const Tensor*>& in,
                        const std::vector<std::vector<double>*>& din) {
    if (din[0]) gemm_nt(dc.data(), in[1]->data(), din[0]->data(), m, k, n);
    if (din[1]) gemm_tn(in[0]->data(), dc.data(), din[1]->data(), m, k, n);
  };
  return push("matmul", {check(a), check(b)}, std::move(out), back);
}

Value Tape::conv2d(Value x, Value w, int stride, int pad) {
  const Tensor& tx = value(x);
  const Tensor& tw = value(w);
  const ConvDims d = conv_dims(tx, tw, stride, pad);
  Tensor out({d.n, d.f, d.ho, d.wo});
  const double* xp = tx.data();
  const double* wp = tw.data();
  double* op = out.data();
  const std::size_t xs_c = d.h * d.w, xs_n = d.c * xs_c;
  const std::size_t ws_c = d.kh * d.kw, ws_f = d.c * ws_c;
  const std::size_t os_f = d.ho * d.wo, os_n = d.f * os_f;

  parallel_for(0, d.n * d.f, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t nf = lo; nf < hi; ++nf) {
      const std::size_t nn = nf / d.f, ff = nf % d.f;
      for (std::size_t oh = 0; oh < d.ho; ++oh) {
        for (std::size_t ow = 0; ow < d.wo; ++ow) {
          double acc = 0.0;
          const long ih0 = static_cast<long>(oh) * d.stride - d.pad;
          const long iw0 = static_cast<long>(ow) * d.stride - d.pad;
          for (std::size_t cc = 0; cc < d.c; ++cc) {
            for (std::size_t r = 0; r < d.kh; ++r) {
              const long ih = ih0 + static_cast<long>(r);
              if (ih < 0 || ih >= static_cast<long>(d.h)) continue;
              for (std::size_t s = 0; s < d.kw; ++s) {
                const long iw = iw0 + static_cast<long>(s);
                if (iw < 0 || iw >= static_cast<long>(d.w)) continue;
                acc += xp[nn * xs_n + cc * xs_c + ih * d.w + iw] *
                       wp[ff * ws_f + cc * ws_c + r * d.kw + s];
              }
            }
          }
          op[nn * os_n + ff * os_f + oh * d.wo + ow] = acc;
        }
      }
    }
  });

  auto back = [d, xs_c, xs_n, ws_c, ws_f, os_f, os_n](
                  const Tensor&, const std::vector<double>& dout,
                  const std::vector<const Tensor*>& in,
                  const std::vector<std::vector<double>*>& din) {
    const double* xp = in[0]->data();
    const double* wp = in[1]->data();
    for (std::size_t nn = 0; nn < d.n; ++nn) {
      for (std::size_t ff = 0; ff < d.f; ++ff) {
        for (std::size_t oh = 0; oh < d.ho; ++oh) {
          for (std::size_t ow = 0; ow < d.wo; ++ow) {
            const double g = dout[nn * os_n + ff * os_f + oh * d.wo + ow];
            if (g == 0.0) continue;
            const long ih0 = static_cast<long>(oh) * d.stride - d.pad;
            const long iw0 = static_cast<long>(ow) * d.stride - d.pad;
            for (std::size_t cc = 0; cc < d.c; ++cc) {
              for (std::size_t r = 0; r < d.kh; ++r) {
                const long ih = ih0 + static_cast<long>(r);
                if (ih < 0 || ih >= static_cast<long>(d.h)) continue;
                for (std::size_t s = 0; s < d.kw; ++s) {
                  const long iw = iw0 + static_cast<long>(s);
                  if (iw < 0 || iw >= static_cast<long>(d.w)) continue;
                  const std::size_t xi = nn * xs_n + cc * xs_c + ih * d.w + iw;
                  const std::size_t wi = ff * ws_f + cc * ws_c + r * d.kw + s;
                  if (din[0]) (*din[0])[xi] += g * wp[wi];
                  if (din[1]) (*din[1])[wi] += g * xp[xi];
                }
              }
            }
          }
        }
      }
    }
  };
  return push("conv2d", {check(x), check(w)}, std::move(out), back);
}

Value Tape::add_bias(Value x, Value bias) {
  const Tensor& tx = value(x);
  const Tensor& tb = value(bias);
  if (tx.rank() != 2 || tb.rank() != 1 || tb.extent(0) != tx.extent(1)) {
    throw DimensionError("add_bias: shapes " + shape_str(tx.shape()) + " and " +
                         shape_str(tb.shape()));
  }
  const std::size_t m = tx.extent(0), n = tx.extent(1);
  Tensor out = tx;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += tb[j];
  auto back = [m, n](const Tensor&, const std::vector<double>& dout,
                     const std::vector<const Tensor*>&,
                     const std::vector<std::vector<double>*>& din) {
    if (din[0]) {
      for (std::size_t i = 0; i < dout.size(); ++i) (*din[0])[i] += dout[i];
    }
    if (din[1]) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*din[1])[j] += dout[i * n + j];
    }
  };
  return push("add_bias", {check(x), check(bias)}, std::move(out), back);
}

Value Tape::relu(Value x) {
  Tensor out = value(x);
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  auto back = [](const Tensor&, const std::vector<double>& dout,
                 const std::vector<const Tensor*>& in,
                 const std::vector<std::vector<double>*>& din) {
    if (!din[0]) return;
    const Tensor& x = *in[0];
    // relu'(0) := 0
    for (std::size_t i = 0; i < dout.size(); ++i)
      if (x[i] > 0.0) (*din[0])[i] += dout[i];
  };
  return push("relu", {check(x)}, std::move(out), back);
}

Value Tape::add(Value a, Value b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (!ta.same_shape(tb)) {
    throw DimensionError("add: shapes " + shape_str(ta.shape()) + " and " +
                         shape_str(tb.shape()));
  }
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += tb[i];
  auto back = [](const Tensor&, const std::vector<double>& dout,
                 const std::vector<const Tensor*>&,
                 const std::vector<std::vector<double>*>& din) {
    for (std::vector<double>* g : din) {
      if (!g) continue;
      for (std::size_t i = 0; i < dout.size(); ++i) (*g)[i] += dout[i];
    }
  };
  return push("add", {check(a), check(b)}, std::move(out), back);
}

Value Tape::sub(Value a, Value b) { return add(a, scale(b, -1.0)); }

Value Tape::mul(Value a, Value b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (!ta.same_shape(tb)) {
    throw DimensionError("mul: shapes " + shape_str(ta.shape()) + " and " +
                         shape_str(tb.shape()));
  }
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= tb[i];
  auto back = [](const Tensor&, const std::vector<double>& dout,
                 const std::vector<const Tensor*>& in,
                 const std::vector<std::vector<double>*>& din) {
    for (std::size_t i = 0; i < dout.size(); ++i) {
      if (din[0]) (*din[0])[i] += dout[i] * (*in[1])[i];
      if (din[1]) (*din[1])[i] += dout[i] * (*in[0])[i];
    }
  };
  return push("mul", {check(a), check(b)}, std::move(out), back);
}

Value Tape::scale(Value a, double c) {
  Tensor out = value(a);
  for (double& v : out.values()) v *= c;
  auto back = [c](const Tensor&, const std::vector<double>& dout,
                  const std::vector<const Tensor*>&,
                  const std::vector<std::vector<double>*>& din) {
    if (!din[0]) return;
    for (std::size_t i = 0; i < dout.size(); ++i) (*din[0])[i] += c * dout[i];
  };
  return push("scale", {check(a)}, std::move(out), back);
}

Value Tape::sum(Value a) {
  const Tensor& ta = value(a);
  double acc = 0.0;
  for (double v : ta.values()) acc += v;
  auto back = [](const Tensor&, const std::vector<double>& dout,
                 const std::vector<const Tensor*>&,
                 const std::vector<std::vector<double>*>& din) {
    if (!din[0]) return;
    for (double& g : *din[0]) g += dout[0];
  };
  return push("sum", {check(a)}, Tensor::scalar(acc), back);
}

Value Tape::mean(Value a) {
  const std::size_t n = value(a).size();
  if (n == 0) throw DomainError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Value Tape::reshape(Value a, Shape shape) {
  const Tensor& ta = value(a);
  if (numel(shape) != ta.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(ta.shape()) + " as " +
                         shape_str(shape));
  }
  Tensor out = Tensor::from_data(std::move(shape), ta.values());
  auto back = [](const Tensor&, const std::vector<double>& dout,
                 const std::vector<const Tensor*>&,
                 const std::vector<std::vector<double>*>& din) {
    if (!din[0]) return;
    for (std::size_t i = 0; i < dout.size(); ++i) (*din[0])[i] += dout[i];
  };
  return push("reshape", {check(a)}, std::move(out), back);
}

Value Tape::softmax_ce(Value logits, std::vector<int> labels) {
  const Tensor& tl = value(logits);
  if (tl.rank() != 2) {
    throw DimensionError("softmax_ce: expected rank-2 logits, got " + shape_str(tl.shape()));
  }
  const std::size_t m = tl.extent(0), c = tl.extent(1);
  if (labels.size() != m) {
    throw DimensionError("softmax_ce: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(m) + " rows");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= c) {
      throw IndexError("softmax_ce: label " + std::to_string(l) + " outside [0, " +
                       std::to_string(c) + ")");
    }
  }
  Tensor probs({m, c});
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = tl.data() + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double logz = std::log(z) + mx;
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(row[j] - logz);
    loss += logz - row[static_cast<std::size_t>(labels[i])];
  }
  loss /= static_cast<double>(m);
  auto back = [probs = std::move(probs), labels = std::move(labels), m, c](
                  const Tensor&, const std::vector<double>& dout,
                  const std::vector<const Tensor*>&,
                  const std::vector<std::vector<double>*>& din) {
    if (!din[0]) return;
    const double g = dout[0] / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        const double onehot = (static_cast<std::size_t>(labels[i]) == j) ? 1.0 : 0.0;
        (*din[0])[i * c + j] += g * (probs[i * c + j] - onehot);
      }
    }
  };
  return push("softmax_ce", {check(logits)}, Tensor::scalar(loss), back);
}

Value Tape::custom(std::string name, std::vector<Value> inputs, Tensor out,
                   CustomBackward backward) {
  std::vector<std::size_t> ids;
  ids.reserve(inputs.size());
  for (Value v : inputs) ids.push_back(check(v));
  return push(std::move(name), std::move(ids), std::move(out), std::move(backward));
}

void Tape::backward(Value loss) {
  const std::size_t lid = check(loss);
  Node& ln = nodes_[lid];
  if (ln.out.size() != 1) {
    throw DimensionError("backward: loss must be scalar, got " + shape_str(ln.out.shape()));
  }
  for (std::size_t i = 0; i <= lid; ++i) {
    Node& n = nodes_[i];
    if (n.needs_grad) n.adj.assign(n.out.size(), 0.0);
  }
  if (!ln.needs_grad) return;  // no parameter is reachable from the loss
  ln.adj[0] = 1.0;
  for (std::size_t i = lid + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.back || n.adj.empty()) continue;
    std::vector<const Tensor*> in;
    std::vector<std::vector<double>*> din;
    in.reserve(n.inputs.size());
    din.reserve(n.inputs.size());
    for (std::size_t id : n.inputs) {
      in.push_back(&nodes_[id].out);
      din.push_back(nodes_[id].needs_grad ? &nodes_[id].adj : nullptr);
    }
    n.back(n.out, n.adj, in, din);
  }
  for (std::size_t i = 0; i <= lid; ++i) {
    Node& n = nodes_[i];
    if (n.external == nullptr || n.adj.empty()) continue;
    auto& g = n.external->grad();
    for (std::size_t j = 0; j < g.size(); ++j) g[j] += n.adj[j];
  }
}

}  // namespace r2lab

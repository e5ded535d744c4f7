// SPDX-License-Identifier: Apache-2.0
#include "r2lab/palettizers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "r2lab/rng.hpp"

namespace r2lab {

namespace {

constexpr double kDegenerate = 1e-12;

double dist2(const double* a, const double* b, std::size_t d) {
  double acc = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double diff = a[i] - b[i];
    acc += diff * diff;
  }
  return acc;
}

std::size_t nearest(const double* g, const std::vector<double>& codebook, std::size_t k,
                    std::size_t d, double* best_out = nullptr) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::max();
  for (std::size_t j = 0; j < k; ++j) {
    const double dd = dist2(g, codebook.data() + j * d, d);
    if (dd < best_d) {
      best_d = dd;
      best = j;
    }
  }
  if (best_out) *best_out = best_d;
  return best;
}

}  // namespace

Groups group_weights(const Tensor& w, std::size_t d) {
  if (d < 1) throw DomainError("group_weights: dim must be >= 1");
  Groups g;
  g.dim = d;
  const std::size_t n = w.size();
  g.count = (n + d - 1) / d;
  g.pad = g.count * d - n;
  g.data.assign(g.count * d, 0.0);
  std::copy(w.data(), w.data() + n, g.data.begin());
  return g;
}

KmeansResult kmeans_fit(const Groups& groups, std::size_t k, int max_iter, double tol,
                        std::uint64_t seed) {
  if (k < 1) throw DomainError("kmeans_fit: k must be >= 1");
  if (k > groups.count) {
    throw DomainError("kmeans_fit: k = " + std::to_string(k) + " exceeds " +
                      std::to_string(groups.count) + " groups");
  }
  if (max_iter < 1) throw DomainError("kmeans_fit: max_iter must be >= 1");
  const std::size_t n = groups.count, d = groups.dim;
  Rng rng = Rng(seed).fork(0x6b6d65616e73ULL);

  // k-means++ seeding
  std::vector<double> codebook(k * d);
  std::vector<double> min_d2(n, std::numeric_limits<double>::max());
  {
    const std::size_t first = rng.index(n);
    std::copy_n(groups.group(first), d, codebook.begin());
    for (std::size_t c = 1; c < k; ++c) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double dd = dist2(groups.group(i), codebook.data() + (c - 1) * d, d);
        min_d2[i] = std::min(min_d2[i], dd);
        total += min_d2[i];
      }
      std::size_t pick;
      if (total <= 0.0) {
        pick = rng.index(n);
      } else {
        const double target = rng.uniform() * total;
        double cum = 0.0;
        pick = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
          cum += min_d2[i];
          if (cum >= target) {
            pick = i;
            break;
          }
        }
      }
      std::copy_n(groups.group(pick), d, codebook.begin() + c * d);
    }
  }

  KmeansResult res;
  res.assignments.assign(n, 0);
  double prev_sse = std::numeric_limits<double>::max();
  std::vector<double> sums(k * d);
  std::vector<std::size_t> counts(k);

  for (int it = 0; it < max_iter; ++it) {
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best_d = 0.0;
      res.assignments[i] = static_cast<std::uint32_t>(nearest(groups.group(i), codebook, k, d,
                                                              &best_d));
      sse += best_d;
    }
    if (sse > prev_sse + 1e-9 * std::max(1.0, prev_sse)) {
      throw NumericError("kmeans_fit: SSE increased across an iteration");
    }
    prev_sse = sse;
    res.sse = sse;
    res.iterations = it + 1;

    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), std::size_t{0});
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t a = res.assignments[i];
      counts[a]++;
      const double* g = groups.group(i);
      for (std::size_t x = 0; x < d; ++x) sums[a * d + x] += g[x];
    }
    double shift = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] == 0) {
        // re-seed to the point farthest from its assigned centroid
        double far_d = -1.0;
        std::size_t far_i = 0;
        for (std::size_t i = 0; i < n; ++i) {
          const double dd =
              dist2(groups.group(i), codebook.data() + res.assignments[i] * d, d);
          if (dd > far_d) {
            far_d = dd;
            far_i = i;
          }
        }
        std::copy_n(groups.group(far_i), d, codebook.begin() + j * d);
        shift = std::numeric_limits<double>::max();
        continue;
      }
      for (std::size_t x = 0; x < d; ++x) {
        const double next = sums[j * d + x] / static_cast<double>(counts[j]);
        shift = std::max(shift, std::fabs(next - codebook[j * d + x]));
        codebook[j * d + x] = next;
      }
    }
    if (shift < tol) break;
  }

  // final assignment against the converged codebook
  double sse = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double best_d = 0.0;
    res.assignments[i] =
        static_cast<std::uint32_t>(nearest(groups.group(i), codebook, k, d, &best_d));
    sse += best_d;
  }
  res.sse = sse;
  res.codebook = std::move(codebook);
  return res;
}

std::vector<double> dkm_attention(const Groups& groups, const std::vector<double>& codebook,
                                  std::size_t k, double tau) {
  if (tau <= 0.0) throw DomainError("dkm_attention: tau must be positive");
  if (codebook.size() != k * groups.dim) {
    throw DimensionError("dkm_attention: codebook size mismatch");
  }
  const std::size_t n = groups.count, d = groups.dim;
  std::vector<double> attn(n * k);
  std::vector<double> logits(k);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::max();
    for (std::size_t j = 0; j < k; ++j) {
      logits[j] = -dist2(groups.group(i), codebook.data() + j * d, d) / tau;
      mx = std::max(mx, logits[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      attn[i * k + j] = std::exp(logits[j] - mx);
      z += attn[i * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) attn[i * k + j] /= z;
  }
  return attn;
}

DkmIterate dkm_iterate(const Groups& groups, const std::vector<double>& codebook, std::size_t k,
                       double tau) {
  DkmIterate out;
  out.attention = dkm_attention(groups, codebook, k, tau);
  out.codebook.assign(k * groups.dim, 0.0);
  out.degenerate.assign(k, 0);
  const std::size_t n = groups.count, d = groups.dim;
  std::vector<double> col_sum(k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* g = groups.group(i);
    for (std::size_t j = 0; j < k; ++j) {
      const double a = out.attention[i * k + j];
      col_sum[j] += a;
      for (std::size_t x = 0; x < d; ++x) out.codebook[j * d + x] += a * g[x];
    }
  }
  for (std::size_t j = 0; j < k; ++j) {
    if (col_sum[j] < kDegenerate) {
      out.degenerate[j] = 1;
      std::copy_n(codebook.begin() + j * d, d, out.codebook.begin() + j * d);
    } else {
      for (std::size_t x = 0; x < d; ++x) out.codebook[j * d + x] /= col_sum[j];
    }
  }
  return out;
}

DkmForward dkm_forward(const Tensor& w, const std::vector<double>& prev_codebook, std::size_t k,
                       std::size_t d, double tau) {
  const Groups groups = group_weights(w, d);
  DkmIterate it = dkm_iterate(groups, prev_codebook, k, tau);
  DkmForward out;
  out.attention = std::move(it.attention);
  out.codebook = std::move(it.codebook);
  out.degenerate = std::move(it.degenerate);
  out.group_count = groups.count;
  out.reconstructed = Tensor(w.shape());
  for (std::size_t i = 0; i < groups.count; ++i) {
    for (std::size_t x = 0; x < d; ++x) {
      const std::size_t flat = i * d + x;
      if (flat >= w.size()) break;  // padding excluded from reconstruction
      double acc = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        acc += out.attention[i * k + j] * out.codebook[j * d + x];
      }
      out.reconstructed[flat] = acc;
    }
  }
  return out;
}

Tensor dkm_backward(const Tensor& w, const std::vector<double>& prev_codebook,
                    const DkmForward& fwd, std::size_t k, std::size_t d, double tau,
                    const Tensor& upstream) {
  if (!upstream.same_shape(w)) throw DimensionError("dkm_backward: upstream shape mismatch");
  const Groups groups = group_weights(w, d);
  const std::size_t n = groups.count;
  const auto& attn = fwd.attention;
  const auto& cb = fwd.codebook;

  // upstream gathered per group; padding positions carry zero
  std::vector<double> gup(n * d, 0.0);
  std::copy(upstream.data(), upstream.data() + upstream.size(), gup.begin());

  // column sums S_j and centroid-gradient H_j = sum_i A_ij G_i
  std::vector<double> col_sum(k, 0.0);
  std::vector<double> h(k * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const double a = attn[i * k + j];
      col_sum[j] += a;
      for (std::size_t x = 0; x < d; ++x) h[j * d + x] += a * gup[i * d + x];
    }
  }
  // h_dot_c[j] = H_j . c'_j for the column-sum path
  std::vector<double> h_dot_c(k, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t x = 0; x < d; ++x) h_dot_c[j] += h[j * d + x] * cb[j * d + x];
  }

  Tensor grad(w.shape());
  std::vector<double> da(k);
  for (std::size_t i = 0; i < n; ++i) {
    const double* g = groups.group(i);
    const double* gi = gup.data() + i * d;
    // dL/dA_ij: reconstruction term + centroid-update terms
    for (std::size_t j = 0; j < k; ++j) {
      double v = 0.0;
      for (std::size_t x = 0; x < d; ++x) v += gi[x] * cb[j * d + x];
      if (!fwd.degenerate[j]) {
        double h_dot_g = 0.0;
        for (std::size_t x = 0; x < d; ++x) h_dot_g += h[j * d + x] * g[x];
        v += (h_dot_g - h_dot_c[j]) / col_sum[j];
      }
      da[j] = v;
    }
    // softmax backward: dz_ij = A_ij (da_j - sum_l A_il da_l)
    double row_dot = 0.0;
    for (std::size_t j = 0; j < k; ++j) row_dot += attn[i * k + j] * da[j];
    for (std::size_t j = 0; j < k; ++j) {
      const double dz = attn[i * k + j] * (da[j] - row_dot);
      const double dd = -dz / tau;  // through -dist^2 / tau
      for (std::size_t x = 0; x < d; ++x) {
        const std::size_t flat = i * d + x;
        if (flat >= w.size()) break;
        grad[flat] += dd * 2.0 * (g[x] - prev_codebook[j * d + x]);
      }
    }
    // direct path through the centroid means
    for (std::size_t x = 0; x < d; ++x) {
      const std::size_t flat = i * d + x;
      if (flat >= w.size()) break;
      double acc = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        if (fwd.degenerate[j]) continue;
        acc += attn[i * k + j] * h[j * d + x] / col_sum[j];
      }
      grad[flat] += acc;
    }
  }
  return grad;
}

Palette hard_assign(const std::string& layer, const Tensor& w,
                    const std::vector<double>& codebook, int bits, std::size_t d) {
  Palette p;
  p.layer_name = layer;
  p.bits = bits;
  p.dim = d;
  p.codebook = codebook;
  const Groups groups = group_weights(w, d);
  p.pad = groups.pad;
  p.assignments.resize(groups.count);
  for (std::size_t i = 0; i < groups.count; ++i) {
    p.assignments[i] = static_cast<std::uint32_t>(nearest(groups.group(i), codebook, p.k(), d));
  }
  return p;
}

Tensor palette_reconstruct(const Palette& palette, const Shape& shape) {
  Tensor out(shape);
  const std::size_t d = palette.dim;
  for (std::size_t i = 0; i < palette.assignments.size(); ++i) {
    const double* c = palette.codebook.data() + palette.assignments[i] * d;
    for (std::size_t x = 0; x < d; ++x) {
      const std::size_t flat = i * d + x;
      if (flat >= out.size()) break;
      out[flat] = c[x];
    }
  }
  return out;
}

std::size_t palette_index_bytes(std::size_t params, int bits, std::size_t dim) {
  const std::size_t groups = (params + dim - 1) / dim;
  const std::size_t index_bits = groups * static_cast<std::size_t>(bits);
  return (index_bits + 7) / 8;
}

std::size_t palette_codebook_bytes(int bits, std::size_t dim, int fp_bits) {
  return (std::size_t(1) << bits) * dim * static_cast<std::size_t>(fp_bits) / 8;
}

SizeReport size_report(const Model& model, const std::map<std::string, PaletteSpec>& specs,
                       int fp_bits) {
  if (fp_bits % 8 != 0 || fp_bits <= 0) throw DomainError("size_report: fp_bits must be a positive multiple of 8");
  SizeReport rep;
  for (const auto& [name, spec] : specs) {
    bool found = false;
    for (const Layer& l : model.layers()) {
      if (l.name == name && l.has_params()) found = true;
    }
    if (!found) throw ConfigError("size_report: palette config names unknown layer '" + name + "'");
  }
  const std::size_t fp_bytes_per = static_cast<std::size_t>(fp_bits) / 8;
  for (const Layer& l : model.layers()) {
    if (!l.has_params()) continue;
    const auto it = specs.find(l.name);
    SizeReport::Entry we;
    we.name = l.name + ".weight";
    we.params = l.weight.size();
    if (it != specs.end()) {
      we.bits = it->second.bits;
      we.dim = it->second.dim;
      we.index_bytes = palette_index_bytes(we.params, we.bits, we.dim);
      we.codebook_bytes = palette_codebook_bytes(we.bits, we.dim, fp_bits);
    } else {
      we.fp_bytes = we.params * fp_bytes_per;
    }
    rep.entries.push_back(we);

    SizeReport::Entry be;
    be.name = l.name + ".bias";
    be.params = l.bias.size();
    be.fp_bytes = be.params * fp_bytes_per;
    rep.entries.push_back(be);
  }
  for (const auto& e : rep.entries) {
    rep.codebook_total += e.codebook_bytes;
    rep.index_total += e.index_bytes;
    rep.fp_total += e.fp_bytes;
  }
  rep.total_bytes = rep.codebook_total + rep.index_total + rep.fp_total;
  return rep;
}

}  // namespace r2lab

// SPDX-License-Identifier: Apache-2.0
#include "r2lab/analytics.hpp"

#include <algorithm>
#include <cmath>

namespace r2lab {

LayerStats layer_stats(const std::string& name, const Tensor& w) {
  if (w.size() < 2) throw DomainError("layer_stats: need at least 2 elements");
  LayerStats s;
  s.layer = name;
  s.count = w.size();
  double mn = w[0], mx = w[0], mean = 0.0;
  for (double v : w.values()) {
    mn = std::min(mn, v);
    mx = std::max(mx, v);
    mean += v;
  }
  mean /= static_cast<double>(w.size());
  double m2 = 0.0, m4 = 0.0;
  for (double v : w.values()) {
    const double d = v - mean;
    m2 += d * d;
    m4 += d * d * d * d;
  }
  m2 /= static_cast<double>(w.size());
  m4 /= static_cast<double>(w.size());
  s.min = mn;
  s.max = mx;
  s.range = mx - mn;
  s.mean = mean;
  s.std_dev = std::sqrt(m2);
  if (m2 > 0.0) s.kurtosis = m4 / (m2 * m2);
  return s;
}

Histogram histogram(const Tensor& w, std::size_t n_bins) {
  if (n_bins < 1) throw DomainError("histogram: need at least one bin");
  if (w.size() == 0) throw DomainError("histogram: empty tensor");
  double mn = w[0], mx = w[0];
  for (double v : w.values()) {
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  Histogram h;
  h.counts.assign(n_bins, 0);
  h.edges.resize(n_bins + 1);
  const double width = (mx - mn) / static_cast<double>(n_bins);
  for (std::size_t i = 0; i <= n_bins; ++i) h.edges[i] = mn + width * static_cast<double>(i);
  h.edges[n_bins] = mx;
  if (mx == mn) {
    h.counts[0] = w.size();  // constant tensor: single occupied bin
    return h;
  }
  for (double v : w.values()) {
    std::size_t bin = static_cast<std::size_t>((v - mn) / width);
    if (bin >= n_bins) bin = n_bins - 1;  // max value included in last bin
    h.counts[bin]++;
  }
  return h;
}

SkewInfo skew_check(const Tensor& w) {
  if (w.size() < 2) throw DomainError("skew_check: need at least 2 elements");
  std::vector<double> sorted(w.values());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const double median =
      (n % 2 == 1) ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  double mean = 0.0;
  for (double v : sorted) mean += v;
  mean /= static_cast<double>(n);
  double m2 = 0.0, m3 = 0.0;
  for (double v : sorted) {
    const double d = v - mean;
    m2 += d * d;
    m3 += d * d * d;
  }
  m2 /= static_cast<double>(n);
  m3 /= static_cast<double>(n);
  SkewInfo info;
  info.mean_offset = 0.5 * (sorted.front() + sorted.back()) - median;
  info.asymmetry = m2 > 0.0 ? m3 / std::pow(m2, 1.5) : 0.0;
  return info;
}

std::vector<StatsRow> stats_table(const std::vector<NamedTensorView>& a,
                                  const std::vector<NamedTensorView>& b) {
  if (a.size() != b.size()) {
    throw DimensionError("stats_table: checkpoints have different layer counts");
  }
  std::vector<StatsRow> rows;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].layer != b[i].layer || !a[i].tensor->same_shape(*b[i].tensor)) {
      throw DimensionError("stats_table: architecture mismatch at layer '" + a[i].layer + "'");
    }
    const LayerStats sa = layer_stats(a[i].layer, *a[i].tensor);
    const LayerStats sb = layer_stats(b[i].layer, *b[i].tensor);
    StatsRow r;
    r.layer = a[i].layer;
    r.range_a = sa.range;
    r.range_b = sb.range;
    r.range_ratio = sb.range != 0.0 ? sa.range / sb.range : 0.0;
    r.std_a = sa.std_dev;
    r.std_b = sb.std_dev;
    r.std_ratio = sb.std_dev != 0.0 ? sa.std_dev / sb.std_dev : 0.0;
    rows.push_back(r);
  }
  return rows;
}

}  // namespace r2lab

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "r2lab/tensor.hpp"

namespace r2lab {

struct Histogram {
  std::vector<double> edges;       // n_bins + 1
  std::vector<std::size_t> counts; // n_bins
  double bin_center(std::size_t i) const { return 0.5 * (edges[i] + edges[i + 1]); }
};

/// Per-layer weight distribution summary. Moments are population moments
/// at 64 bit; kurtosis is raw (Pearson), so uniform ~ 1.8 and normal ~ 3.
struct LayerStats {
  std::string layer;
  std::size_t count = 0;
  double min = 0.0, max = 0.0, range = 0.0, mean = 0.0, std_dev = 0.0;
  std::optional<double> kurtosis;  // absent when std_dev == 0
};

LayerStats layer_stats(const std::string& name, const Tensor& w);

/// Equal-width bins over [min, max]; the max value lands in the last bin.
Histogram histogram(const Tensor& w, std::size_t n_bins);

struct SkewInfo {
  double mean_offset = 0.0;  // (min + max)/2 - median
  double asymmetry = 0.0;    // third standardized moment
};

SkewInfo skew_check(const Tensor& w);

/// Paired per-layer comparison of two checkpoints' weight tensors.
struct StatsRow {
  std::string layer;
  double range_a = 0.0, range_b = 0.0, range_ratio = 0.0;
  double std_a = 0.0, std_b = 0.0, std_ratio = 0.0;
};

struct NamedTensorView {
  std::string layer;
  const Tensor* tensor;
};

/// Rows pair a-side over b-side stats with ratio columns (a / b). Layer
/// lists must match exactly (same architecture).
std::vector<StatsRow> stats_table(const std::vector<NamedTensorView>& a,
                                  const std::vector<NamedTensorView>& b);

}  // namespace r2lab

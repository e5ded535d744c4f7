// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "r2lab/model.hpp"
#include "r2lab/tensor.hpp"

namespace r2lab {

/// Per-layer codebook of 2^bits centroids of dimension dim plus the
/// assignment index of every weight group. Padding added by grouping is
/// tracked and excluded from reconstruction.
struct Palette {
  std::string layer_name;
  int bits = 1;
  std::size_t dim = 1;
  std::size_t pad = 0;
  std::vector<double> codebook;        // k * dim, row-major
  std::vector<std::uint32_t> assignments;
  std::size_t k() const { return std::size_t(1) << bits; }
};

/// Flattened weights chunked into dim-vectors, zero-padded to a multiple
/// of dim.
struct Groups {
  std::vector<double> data;  // count * dim
  std::size_t dim = 1;
  std::size_t count = 0;
  std::size_t pad = 0;
  const double* group(std::size_t i) const { return data.data() + i * dim; }
};

Groups group_weights(const Tensor& w, std::size_t d);

struct KmeansResult {
  std::vector<double> codebook;  // k * dim
  std::vector<std::uint32_t> assignments;
  double sse = 0.0;
  int iterations = 0;
};

/// Lloyd iterations from seeded k-means++ init. Stops when the largest
/// centroid shift drops below tol or max_iter is reached. Empty clusters
/// are re-seeded to the farthest point. SSE is asserted non-increasing
/// every iteration.
KmeansResult kmeans_fit(const Groups& groups, std::size_t k, int max_iter, double tol,
                        std::uint64_t seed);

/// Row-stochastic attention: A_ij = softmax_j(-|g_i - c_j|^2 / tau).
std::vector<double> dkm_attention(const Groups& groups, const std::vector<double>& codebook,
                                  std::size_t k, double tau);

struct DkmIterate {
  std::vector<double> codebook;   // attention-weighted update
  std::vector<double> attention;  // count * k
  std::vector<std::uint8_t> degenerate;  // columns that kept the previous centroid
};

/// One soft clustering step: attention against the given codebook, then
/// attention-weighted centroid update. Columns with total attention below
/// 1e-12 keep their previous centroid.
DkmIterate dkm_iterate(const Groups& groups, const std::vector<double>& codebook, std::size_t k,
                       double tau);

struct DkmForward {
  Tensor reconstructed;           // same shape as the weight tensor
  std::vector<double> attention;  // count * k
  std::vector<double> codebook;   // updated codebook
  std::vector<std::uint8_t> degenerate;
  std::size_t group_count = 0;
};

/// Soft forward pass W -> A(W) C'(W) against a detached previous
/// codebook.
DkmForward dkm_forward(const Tensor& w, const std::vector<double>& prev_codebook, std::size_t k,
                       std::size_t d, double tau);

/// Gradient of a loss through the full soft path (attention and centroid
/// update both treated as functions of W).
Tensor dkm_backward(const Tensor& w, const std::vector<double>& prev_codebook,
                    const DkmForward& fwd, std::size_t k, std::size_t d, double tau,
                    const Tensor& upstream);

/// Hard snapshot: nearest-centroid assignments and reconstruction.
Palette hard_assign(const std::string& layer, const Tensor& w,
                    const std::vector<double>& codebook, int bits, std::size_t d);
Tensor palette_reconstruct(const Palette& palette, const Shape& shape);

struct PaletteSpec {
  int bits = 1;
  std::size_t dim = 1;
};

struct SizeReport {
  struct Entry {
    std::string name;
    std::size_t params = 0;
    int bits = 0;             // 0 = stored at fp_bits
    std::size_t dim = 1;
    std::size_t codebook_bytes = 0;
    std::size_t index_bytes = 0;
    std::size_t fp_bytes = 0;
  };
  std::vector<Entry> entries;
  std::size_t codebook_total = 0;
  std::size_t index_total = 0;
  std::size_t fp_total = 0;
  std::size_t total_bytes = 0;
};

/// index bytes = ceil(ceil(params/dim) * bits / 8).
std::size_t palette_index_bytes(std::size_t params, int bits, std::size_t dim);
/// codebook bytes = 2^bits * dim * fp_bits / 8.
std::size_t palette_codebook_bytes(int bits, std::size_t dim, int fp_bits);

/// Compressed-size accounting: palettized weight layers per the spec map,
/// everything else at fp_bits. Specs naming unknown layers raise
/// ConfigError.
SizeReport size_report(const Model& model, const std::map<std::string, PaletteSpec>& specs,
                       int fp_bits = 32);

}  // namespace r2lab

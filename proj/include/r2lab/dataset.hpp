// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "r2lab/tensor.hpp"

namespace r2lab {

/// Immutable image/label set. Pixel values live in [0, 1].
struct Dataset {
  Tensor images;  // [N, C, H, W]
  std::vector<int> labels;
  std::size_t classes = 0;
  std::string split;

  std::size_t n() const { return labels.size(); }
  std::size_t sample_size() const { return n() ? images.size() / n() : 0; }
  void validate() const;

  Tensor batch_images(const std::vector<std::size_t>& idx) const;
  std::vector<int> batch_labels(const std::vector<std::size_t>& idx) const;
};

/// Class-conditional Gaussians around fixed per-class means inside the
/// unit box. Means depend only on (seed, classes, dim); the noise stream
/// depends additionally on the split tag, so train/test share means. A
/// leading block of `hot_dims` dimensions gets `hot_boost` times the mean
/// spread, which makes a trained first layer grow a long-tailed weight
/// distribution.
struct SynthSpec {
  std::size_t n = 0;
  std::size_t classes = 10;
  std::size_t dim = 64;
  std::uint64_t seed = 1;
  double mean_spread = 0.08;
  double noise_std = 0.25;
  std::size_t hot_dims = 0;
  double hot_boost = 1.0;
  std::string split = "train";
};

Dataset synth_gaussian(const SynthSpec& spec);
Dataset synth_gaussian(std::size_t n, std::size_t classes, std::size_t dim, std::uint64_t seed);

/// IDX ingestion (big-endian headers; 0x803 image and 0x801 label magic).
/// Pixels are scaled by 1/255.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

}  // namespace r2lab

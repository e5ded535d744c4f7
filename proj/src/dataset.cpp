// SPDX-License-Identifier: Apache-2.0
#include "r2lab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "r2lab/rng.hpp"

namespace r2lab {

void Dataset::validate() const {
  if (images.rank() != 4) {
    throw DimensionError("dataset: images must be NCHW, got " + shape_str(images.shape()));
  }
  if (images.extent(0) != labels.size()) {
    throw FormatError("dataset: " + std::to_string(images.extent(0)) + " images vs " +
                      std::to_string(labels.size()) + " labels");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= classes) {
      throw IndexError("dataset: label " + std::to_string(l) + " outside [0, " +
                       std::to_string(classes) + ")");
    }
  }
}

Tensor Dataset::batch_images(const std::vector<std::size_t>& idx) const {
  const std::size_t s = sample_size();
  Tensor out({idx.size(), images.extent(1), images.extent(2), images.extent(3)});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const double* src = images.data() + idx[i] * s;
    std::copy(src, src + s, out.data() + i * s);
  }
  return out;
}

std::vector<int> Dataset::batch_labels(const std::vector<std::size_t>& idx) const {
  std::vector<int> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = labels[idx[i]];
  return out;
}

Dataset synth_gaussian(const SynthSpec& spec) {
  if (spec.n == 0) throw DomainError("synth_gaussian: empty dataset requested");
  if (spec.classes < 2) throw DomainError("synth_gaussian: need at least 2 classes");
  if (spec.dim < 1) throw DomainError("synth_gaussian: dim must be >= 1");

  // fixed per-class means, independent of n and split
  Rng mean_rng = Rng(spec.seed).fork(0x6d65616e73ULL);
  std::vector<double> means(spec.classes * spec.dim);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t j = 0; j < spec.dim; ++j) {
      const double spread = spec.mean_spread * (j < spec.hot_dims ? spec.hot_boost : 1.0);
      means[c * spec.dim + j] = std::clamp(mean_rng.normal(0.0, spread), -0.45, 0.45);
    }
  }

  std::uint64_t split_tag = 0;
  for (char ch : spec.split) split_tag = split_tag * 131 + static_cast<unsigned char>(ch);
  Rng noise_rng = Rng(spec.seed).fork(0x6e6f697365ULL ^ split_tag);

  // square images when dim allows, otherwise a 1 x dim strip
  std::size_t h = 1, w = spec.dim;
  const auto root = static_cast<std::size_t>(std::lround(std::sqrt(double(spec.dim))));
  if (root * root == spec.dim) {
    h = w = root;
  }

  Dataset ds;
  ds.classes = spec.classes;
  ds.split = spec.split;
  ds.images = Tensor({spec.n, 1, h, w});
  ds.labels.resize(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const std::size_t c = i % spec.classes;
    ds.labels[i] = static_cast<int>(c);
    double* row = ds.images.data() + i * spec.dim;
    for (std::size_t j = 0; j < spec.dim; ++j) {
      const double v = 0.5 + means[c * spec.dim + j] + noise_rng.normal(0.0, spec.noise_std);
      row[j] = std::clamp(v, 0.0, 1.0);
    }
  }
  ds.validate();
  return ds;
}

Dataset synth_gaussian(std::size_t n, std::size_t classes, std::size_t dim, std::uint64_t seed) {
  SynthSpec spec;
  spec.n = n;
  spec.classes = classes;
  spec.dim = dim;
  spec.seed = seed;
  return synth_gaussian(spec);
}

namespace {

std::uint32_t read_be32(std::ifstream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw FormatError("idx: truncated header in " + path);
  }
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         std::uint32_t(b[3]);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw FormatError("idx: cannot open " + images_path);
  if (read_be32(img, images_path) != 0x00000803u) {
    throw FormatError("idx: bad image magic in " + images_path);
  }
  const std::uint32_t n = read_be32(img, images_path);
  const std::uint32_t rows = read_be32(img, images_path);
  const std::uint32_t cols = read_be32(img, images_path);

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw FormatError("idx: cannot open " + labels_path);
  if (read_be32(lab, labels_path) != 0x00000801u) {
    throw FormatError("idx: bad label magic in " + labels_path);
  }
  const std::uint32_t n_labels = read_be32(lab, labels_path);
  if (n_labels != n) {
    throw FormatError("idx: " + std::to_string(n) + " images but " + std::to_string(n_labels) +
                      " labels");
  }

  const std::size_t pixels = std::size_t(n) * rows * cols;
  std::vector<unsigned char> raw(pixels);
  if (!img.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(pixels))) {
    throw FormatError("idx: truncated image data in " + images_path);
  }
  std::vector<unsigned char> raw_labels(n);
  if (!lab.read(reinterpret_cast<char*>(raw_labels.data()), static_cast<std::streamsize>(n))) {
    throw FormatError("idx: truncated label data in " + labels_path);
  }

  Dataset ds;
  ds.images = Tensor({n, 1, rows, cols});
  for (std::size_t i = 0; i < pixels; ++i) {
    ds.images[i] = static_cast<double>(raw[i]) / 255.0;
  }
  ds.labels.resize(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = static_cast<int>(raw_labels[i]);
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.classes = static_cast<std::size_t>(max_label) + 1;
  ds.validate();
  return ds;
}

}  // namespace r2lab

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "r2lab/trainer.hpp"

namespace r2lab {

struct ModelConfig {
  std::string kind = "mlp";
  std::vector<std::size_t> dims = {784, 128, 64, 10};  // mlp
  std::size_t in_c = 1, in_h = 28, in_w = 28;          // cnn
  std::size_t conv1 = 16, conv2 = 32;
  std::size_t classes = 10;

  std::string arch() const;
};

struct DataConfig {
  std::string kind = "synth";
  // synth
  std::size_t n_train = 2560;
  std::size_t n_test = 512;
  std::size_t classes = 10;
  std::size_t dim = 784;
  std::uint64_t seed = 1;
  double mean_spread = 0.08;
  double noise_std = 0.25;
  std::size_t hot_dims = 16;
  double hot_boost = 6.0;
  // idx
  std::string train_images, train_labels, test_images, test_labels;
};

struct ReportConfig {
  std::size_t histogram_bins = 64;
};

/// Whole experiment description: every trainer, regularizer, quantizer
/// and palettizer knob. Unknown keys anywhere are rejected with the full
/// field path before any compute starts.
struct ExperimentConfig {
  ModelConfig model;
  DataConfig data;
  TrainConfig train;
  ReportConfig report;

  /// Resolved config (defaults applied) as canonical JSON.
  nlohmann::json to_json() const;
  /// Fingerprint of the sections a checkpoint depends on (model + data).
  std::string compat_hash() const;

  Dataset load_train() const;
  Dataset load_test() const;
};

ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config_file(const std::string& path);

}  // namespace r2lab

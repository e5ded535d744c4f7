// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "r2lab/checkpoint.hpp"
#include "r2lab/dataset.hpp"
#include "r2lab/model.hpp"
#include "r2lab/palettizers.hpp"
#include "r2lab/quantizers.hpp"
#include "r2lab/regularizers.hpp"

namespace r2lab {

enum class Phase { Pretrain, Qat, Compress };
enum class LrSchedule { Cosine, Step, Constant };

std::string phase_name(Phase p);
Phase phase_from(const std::string& name);
LrSchedule schedule_from(const std::string& name);
std::string schedule_name(LrSchedule s);

struct RegConfig {
  RegKind kind = RegKind::None;
  double lambda = 0.01;
  double alpha_init = 0.1;
};

struct QuantTrainConfig {
  QuantMethod method = QuantMethod::Lsq;
  int bits = 8;
  int act_bits = 0;          // 0 = full-precision activations
  double act_clip_init = 6.0;
  double ewgs_delta = 0.1;
};

struct PaletteTrainConfig {
  int bits = 4;
  std::size_t dim = 1;
  double tau = 1e-3;
  int kmeans_iters = 25;
  double kmeans_tol = 1e-9;
};

struct TrainConfig {
  Phase phase = Phase::Pretrain;
  double lr = 0.1;
  double momentum = 0.9;        // SGD with 0.9 momentum
  double weight_decay = 1e-4;   // 1e-4, Nesterov on
  bool nesterov = true;
  int epochs = 10;
  std::size_t batch_size = 128;
  std::uint64_t seed = 1;
  LrSchedule schedule = LrSchedule::Cosine;
  RegConfig reg;
  QuantTrainConfig quant;
  PaletteTrainConfig palette;

  void validate() const;
};

struct LayerRange {
  std::string layer;
  double range = 0.0;
  double std_dev = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;  // learning rate at the last step of the epoch
  double task_loss = 0.0;
  double reg_loss = 0.0;
  double test_accuracy = 0.0;
  std::vector<LayerRange> layer_stats;
};

struct RunResult {
  std::vector<EpochRecord> epochs;
  double final_accuracy = 0.0;
  double init_accuracy = 0.0;  // accuracy of the starting checkpoint (qat/compress)
  Checkpoint checkpoint;
  SizeReport sizes;  // populated by the compress phase
};

double lr_schedule(std::size_t step, std::size_t total_steps, LrSchedule schedule, double lr0);

/// Nesterov-momentum SGD over raw tensors:
///   g = grad + wd * w (decayed items only)
///   v = momentum * v + g
///   w -= lr * (nesterov ? g + momentum * v : v)
/// Items can carry a floor applied after the update (temperature and step
/// clamps).
class SgdOptimizer {
 public:
  struct Item {
    Tensor* tensor = nullptr;
    bool decay = false;
    double floor = 0.0;
    bool has_floor = false;
  };

  SgdOptimizer(std::vector<Item> items, double momentum, double weight_decay, bool nesterov);
  void step(double lr);
  void zero_grads();

 private:
  std::vector<Item> items_;
  std::vector<std::vector<double>> velocity_;
  double momentum_, weight_decay_;
  bool nesterov_;
};

/// Phase 1: full-precision training with an optional range regularizer.
RunResult run_pretrain(const TrainConfig& cfg, const std::string& arch, const Dataset& train,
                       const Dataset& test);
/// Phase 2: fake-quantized training from a checkpoint. All conv/linear
/// layers are quantized, first and last included. Evaluation always runs
/// on hard-quantized weights (grid membership is asserted).
RunResult run_qat(const TrainConfig& cfg, const Checkpoint& init, const Dataset& train,
                  const Dataset& test);
/// Phase 3: soft-clustered (palettized) training from a checkpoint; ends
/// with a hard-assignment snapshot and a size report.
RunResult run_compress(const TrainConfig& cfg, const Checkpoint& init, const Dataset& train,
                       const Dataset& test);

/// Top-1 accuracy over a dataset, deterministic batch order.
double evaluate_accuracy(Model& model, const Dataset& data, std::size_t batch_size);

/// Throws NumericError unless every weight sits exactly on the quantizer
/// grid.
void assert_on_grid(const Tensor& w, const QuantState& q);

}  // namespace r2lab

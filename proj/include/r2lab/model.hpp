// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "r2lab/tape.hpp"
#include "r2lab/tensor.hpp"

namespace r2lab {

enum class LayerKind { Linear, Conv2d, Relu, Flatten };

struct Layer {
  LayerKind kind = LayerKind::Relu;
  std::string name;
  Tensor weight;  // Linear: [in, out]; Conv2d: [F, C, kh, kw]
  Tensor bias;    // Linear: [out];     Conv2d: [F]
  int stride = 1;
  int pad = 0;
  bool has_params() const { return kind == LayerKind::Linear || kind == LayerKind::Conv2d; }
};

struct ParamRef {
  std::string name;   // "<layer>.weight", "<layer>.bias"
  std::string layer;  // owning layer name
  Tensor* tensor = nullptr;
  bool is_weight = false;
};

/// Substitution hooks used by fake-quantized and palettized training.
/// `weight` maps a raw weight leaf to the value actually consumed by the
/// layer op; `activation` is applied after every relu.
struct ForwardHooks {
  std::function<Value(Tape&, const Layer&, Value)> weight;
  std::function<Value(Tape&, const Layer&, Value)> activation;
};

/// Per-forward bookkeeping: the raw weight leaf of every parameterized
/// layer, keyed by layer name.
struct ForwardRecord {
  std::map<std::string, Value> weight_leaf;
};

/// Ordered stack of layers with named parameter tensors. Two desk-scale
/// architectures are provided: an MLP and a two-conv CNN.
class Model {
 public:
  Model() = default;

  static Model mlp(const std::vector<std::size_t>& dims);
  static Model cnn(std::size_t in_c, std::size_t in_h, std::size_t in_w, std::size_t f1,
                   std::size_t f2, std::size_t classes);
  /// Rebuilds a model (uninitialized parameters) from its arch string,
  /// e.g. "mlp:784-128-64-10" or "cnn:1x28x28-16-32-10".
  static Model from_arch(const std::string& arch);

  const std::string& arch() const { return arch_; }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }
  Layer& layer_named(const std::string& name);
  const Layer& layer_named(const std::string& name) const;

  /// He-normal weight init, zero biases.
  void init_params(std::uint64_t seed);

  /// Records the forward pass on the tape. Rank-4 input is flattened
  /// automatically ahead of the first linear layer.
  Value forward(Tape& tape, Value x, const ForwardHooks* hooks = nullptr,
                ForwardRecord* record = nullptr);

  /// All parameters in layer order (weights before biases).
  std::vector<ParamRef> parameters();
  /// Conv/linear weight tensors only: the regularized and
  /// quantized/palettized set.
  std::vector<ParamRef> weight_params();

  std::size_t param_count() const;

 private:
  std::vector<Layer> layers_;
  std::string arch_;
};

}  // namespace r2lab

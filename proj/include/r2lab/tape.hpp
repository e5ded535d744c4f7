// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "r2lab/tensor.hpp"

namespace r2lab {

/// Handle to a value recorded on a Tape.
struct Value {
  std::size_t id = static_cast<std::size_t>(-1);
  bool valid() const { return id != static_cast<std::size_t>(-1); }
};

/// Reverse-mode tape over the small op set the lab needs. Ops append
/// nodes in execution order; backward() seeds the scalar loss adjoint
/// with 1 and replays the tape in exact reverse order. One tape is
/// single-threaded; independent tapes may run concurrently.
///
/// Parameter leaves accumulate their adjoint into Tensor::grad(), so
/// repeated backward calls without zeroing accumulate.
class Tape {
 public:
  /// Backward hook for custom ops: receives the forward output, its
  /// adjoint, the input values, and the input adjoint buffers (null for
  /// inputs that do not require gradients).
  using CustomBackward =
      std::function<void(const Tensor& out, const std::vector<double>& out_adj,
                         const std::vector<const Tensor*>& in,
                         const std::vector<std::vector<double>*>& in_adj)>;

  /// Leaf whose adjoint flows into t.grad(). The referenced tensor must
  /// outlive the tape.
  Value param(Tensor& t);
  /// Constant leaf; no gradient is tracked through it.
  Value input(Tensor t);

  Value matmul(Value a, Value b);
  Value conv2d(Value x, Value w, int stride, int pad);
  /// Adds a length-n bias vector to every row of an m-by-n matrix.
  Value add_bias(Value x, Value bias);
  Value relu(Value x);
  Value add(Value a, Value b);
  Value sub(Value a, Value b);
  Value mul(Value a, Value b);
  Value scale(Value a, double c);
  Value sum(Value a);
  Value mean(Value a);
  Value reshape(Value a, Shape shape);
  /// Mean cross entropy of row-wise softmax against integer labels.
  Value softmax_ce(Value logits, std::vector<int> labels);

  Value custom(std::string name, std::vector<Value> inputs, Tensor out, CustomBackward backward);

  const Tensor& value(Value v) const { return nodes_[check(v)].out; }
  /// Adjoint of a node after backward(). Empty for non-gradient nodes.
  const std::vector<double>& adjoint(Value v) const { return nodes_[check(v)].adj; }

  void backward(Value loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor out;
    std::vector<double> adj;
    Tensor* external = nullptr;
    std::vector<std::size_t> inputs;
    CustomBackward back;
    bool needs_grad = false;
    std::string name;
  };

  std::size_t check(Value v) const;
  Value push(std::string name, std::vector<std::size_t> inputs, Tensor out, CustomBackward back);
  bool any_needs_grad(const std::vector<std::size_t>& ids) const;

  std::vector<Node> nodes_;
};

}  // namespace r2lab

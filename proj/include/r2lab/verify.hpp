// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace r2lab {

struct SuiteResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct GradSuiteOptions {
  int instances = 100;
  std::uint64_t seed = 20240601;
  /// Test hook: flips the sign of the margin weight gradient before the
  /// comparison so oracle sensitivity can be demonstrated.
  bool mutate_margin_sign = false;
};

/// Finite-difference checks of every analytic gradient: the three range
/// penalties (weights and learnable parameters), the learnable-step and
/// activation-clip quantizer gradients, the soft clustering
/// forward/backward, and the plumbing ops (matmul, conv2d, softmax
/// cross-entropy, composite loss).
std::vector<SuiteResult> run_grad_suite(const GradSuiteOptions& opts = {});

/// Soft-min-max limit behaviour and the margin L1 degeneracy.
std::vector<SuiteResult> run_limits_suite(std::uint64_t seed = 20240602);

/// Soft clustering vs Lloyd equivalence at tiny temperature, attention
/// row-stochasticity, and SSE monotonicity.
std::vector<SuiteResult> run_palette_suite(std::uint64_t seed = 20240603);

bool all_passed(const std::vector<SuiteResult>& results);

}  // namespace r2lab

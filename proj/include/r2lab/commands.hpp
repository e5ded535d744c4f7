// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>

#include "r2lab/trainer.hpp"

namespace r2lab {

struct CommandOptions {
  std::string config_path;
  std::string out_dir = "out";
  std::string init_path;
  std::optional<std::uint64_t> seed_override;
  std::string ckpt_a, ckpt_b;  // report
  std::string suite = "all";   // verify
};

/// Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
int cmd_train(Phase phase, const CommandOptions& opts);
int cmd_report(const CommandOptions& opts);
int cmd_verify(const CommandOptions& opts);

}  // namespace r2lab

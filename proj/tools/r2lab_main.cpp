// SPDX-License-Identifier: Apache-2.0
#include <CLI11.hpp>

#include "r2lab/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"r2lab — range-regularization, quantization and palettization lab"};
  app.require_subcommand(1);

  r2lab::CommandOptions opts;
  std::uint64_t seed = 0;

  auto add_train_flags = [&](CLI::App* cmd, bool needs_init) {
    cmd->add_option("--config", opts.config_path, "experiment config (JSON)")->required();
    cmd->add_option("--out", opts.out_dir, "output directory");
    auto* seed_opt = cmd->add_option("--seed", seed, "override train.seed");
    cmd->callback([&opts, &seed, seed_opt]() {
      if (seed_opt->count() > 0) opts.seed_override = seed;
    });
    if (needs_init) {
      cmd->add_option("--init", opts.init_path, "initial checkpoint (prefix or manifest)");
    }
  };

  CLI::App* pretrain = app.add_subcommand("pretrain", "full-precision training, optional range regularizer");
  add_train_flags(pretrain, false);
  CLI::App* qat = app.add_subcommand("qat", "fake-quantized training from a checkpoint");
  add_train_flags(qat, true);
  CLI::App* compress = app.add_subcommand("compress", "palettized training from a checkpoint");
  add_train_flags(compress, true);

  CLI::App* report = app.add_subcommand("report", "compare two checkpoints (stats, histograms, skew)");
  report->add_option("--a", opts.ckpt_a, "first checkpoint")->required();
  report->add_option("--b", opts.ckpt_b, "second checkpoint")->required();
  report->add_option("--out", opts.out_dir, "output directory");

  CLI::App* verify = app.add_subcommand("verify", "run the oracle suites");
  verify->add_option("--suite", opts.suite, "grad|limits|palette|all");

  CLI11_PARSE(app, argc, argv);

  if (pretrain->parsed()) return r2lab::cmd_train(r2lab::Phase::Pretrain, opts);
  if (qat->parsed()) return r2lab::cmd_train(r2lab::Phase::Qat, opts);
  if (compress->parsed()) return r2lab::cmd_train(r2lab::Phase::Compress, opts);
  if (report->parsed()) return r2lab::cmd_report(opts);
  if (verify->parsed()) return r2lab::cmd_verify(opts);
  return 2;
}

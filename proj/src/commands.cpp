// SPDX-License-Identifier: Apache-2.0
#include "r2lab/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "r2lab/analytics.hpp"
#include "r2lab/checkpoint.hpp"
#include "r2lab/config.hpp"
#include "r2lab/verify.hpp"

namespace r2lab {

namespace {

namespace fs = std::filesystem;

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_text_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp);
    out << content;
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw FormatError("cannot rename " + tmp + " to " + path);
  }
}

std::string metrics_csv(const RunResult& res) {
  std::ostringstream os;
  os << "epoch,lr,task_loss,reg_loss,test_accuracy";
  if (!res.epochs.empty()) {
    for (const LayerRange& lr : res.epochs.front().layer_stats) {
      os << ",range_" << lr.layer << ",std_" << lr.layer;
    }
  }
  os << "\n";
  for (const EpochRecord& e : res.epochs) {
    os << e.epoch << "," << num(e.lr) << "," << num(e.task_loss) << "," << num(e.reg_loss) << ","
       << num(e.test_accuracy);
    for (const LayerRange& lr : e.layer_stats) {
      os << "," << num(lr.range) << "," << num(lr.std_dev);
    }
    os << "\n";
  }
  return os.str();
}

std::string summary_text(Phase phase, const ExperimentConfig& cfg, const RunResult& res) {
  std::ostringstream os;
  os << "phase: " << phase_name(phase) << "\n";
  os << "arch: " << cfg.model.arch() << "\n";
  os << "seed: " << cfg.train.seed << "\n";
  os << "epochs: " << cfg.train.epochs << "\n";
  os << "data: " << cfg.data.kind << " (seed " << cfg.data.seed << ")\n";
  os << "std_convention: population\n";
  if (phase == Phase::Pretrain) {
    os << "reg_kind: " << reg_kind_name(cfg.train.reg.kind) << "\n";
    os << "reg_lambda: " << num(cfg.train.reg.lambda) << "\n";
  }
  if (phase == Phase::Qat) {
    os << "quant_method: " << quant_method_name(cfg.train.quant.method) << "\n";
    os << "quant_bits: " << cfg.train.quant.bits << "\n";
    os << "act_bits: " << cfg.train.quant.act_bits << "\n";
    os << "init_test_accuracy: " << num(res.init_accuracy) << "\n";
  }
  if (phase == Phase::Compress) {
    os << "palette_bits: " << cfg.train.palette.bits << "\n";
    os << "palette_dim: " << cfg.train.palette.dim << "\n";
    os << "init_test_accuracy: " << num(res.init_accuracy) << "\n";
  }
  os << "final_test_accuracy: " << num(res.final_accuracy) << "\n";
  if (!res.epochs.empty()) {
    for (const LayerRange& lr : res.epochs.back().layer_stats) {
      os << "layer " << lr.layer << ": range=" << num(lr.range) << " std=" << num(lr.std_dev)
         << "\n";
    }
  }
  if (phase == Phase::Compress) {
    os << "size_report:\n";
    for (const auto& e : res.sizes.entries) {
      os << "  " << e.name << ": params=" << e.params;
      if (e.bits > 0) {
        os << " bits=" << e.bits << " dim=" << e.dim << " index_bytes=" << e.index_bytes
           << " codebook_bytes=" << e.codebook_bytes;
      } else {
        os << " fp_bytes=" << e.fp_bytes;
      }
      os << "\n";
    }
    os << "  index_total_bytes: " << res.sizes.index_total << "\n";
    os << "  codebook_total_bytes: " << res.sizes.codebook_total << "\n";
    os << "  fp_total_bytes: " << res.sizes.fp_total << "\n";
    os << "  total_bytes: " << res.sizes.total_bytes << "\n";
  }
  return os.str();
}

}  // namespace

int cmd_train(Phase phase, const CommandOptions& opts) {
  ExperimentConfig cfg;
  try {
    cfg = load_config_file(opts.config_path);
    if (opts.seed_override) cfg.train.seed = *opts.seed_override;
    cfg.train.phase = phase;
    cfg.train.validate();
    if (phase != Phase::Pretrain && opts.init_path.empty()) {
      std::cerr << "error: " << phase_name(phase) << " requires --init CHECKPOINT\n";
      return 2;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    const Dataset train = cfg.load_train();
    const Dataset test = cfg.load_test();

    RunResult res;
    if (phase == Phase::Pretrain) {
      res = run_pretrain(cfg.train, cfg.model.arch(), train, test);
    } else {
      Checkpoint init = load_checkpoint(opts.init_path);
      if (init.arch != cfg.model.arch()) {
        std::cerr << "error: checkpoint arch '" << init.arch << "' does not match config arch '"
                  << cfg.model.arch() << "'\n";
        return 1;
      }
      if (!init.config_hash.empty() && init.config_hash != cfg.compat_hash()) {
        std::cerr << "warning: checkpoint was produced under a different model/data config "
                  << "(hash " << init.config_hash << " vs " << cfg.compat_hash() << ")\n";
      }
      res = (phase == Phase::Qat) ? run_qat(cfg.train, init, train, test)
                                  : run_compress(cfg.train, init, train, test);
    }

    fs::create_directories(opts.out_dir);
    res.checkpoint.config_hash = cfg.compat_hash();
    save_checkpoint(res.checkpoint, (fs::path(opts.out_dir) / "checkpoint").string());
    write_text_atomic((fs::path(opts.out_dir) / "metrics.csv").string(), metrics_csv(res));
    write_text_atomic((fs::path(opts.out_dir) / "summary.txt").string(),
                      summary_text(phase, cfg, res));
    write_text_atomic((fs::path(opts.out_dir) / "config.json").string(),
                      cfg.to_json().dump(2) + "\n");
    std::cout << phase_name(phase) << " done: final test accuracy "
              << num(res.final_accuracy) << "\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_report(const CommandOptions& opts) {
  try {
    Checkpoint a = load_checkpoint(opts.ckpt_a);
    Checkpoint b = load_checkpoint(opts.ckpt_b);
    if (a.arch != b.arch) {
      std::cerr << "error: architecture mismatch: '" << a.arch << "' vs '" << b.arch << "'\n";
      return 1;
    }
    fs::create_directories(opts.out_dir);

    std::vector<NamedTensorView> va, vb;
    for (const ParamRef& p : a.model.weight_params()) va.push_back({p.layer, p.tensor});
    for (const ParamRef& p : b.model.weight_params()) vb.push_back({p.layer, p.tensor});
    const auto rows = stats_table(va, vb);

    std::ostringstream table;
    table << "layer,range_a,range_b,range_ratio,std_a,std_b,std_ratio\n";
    for (const StatsRow& r : rows) {
      table << r.layer << "," << num(r.range_a) << "," << num(r.range_b) << ","
            << num(r.range_ratio) << "," << num(r.std_a) << "," << num(r.std_b) << ","
            << num(r.std_ratio) << "\n";
    }
    write_text_atomic((fs::path(opts.out_dir) / "stats_table.csv").string(), table.str());

    std::ostringstream skew;
    skew << "layer,side,mean_offset,asymmetry,kurtosis\n";
    auto emit_side = [&](const char* side, Model& model) {
      for (const ParamRef& p : model.weight_params()) {
        const SkewInfo info = skew_check(*p.tensor);
        const LayerStats st = layer_stats(p.layer, *p.tensor);
        skew << p.layer << "," << side << "," << num(info.mean_offset) << ","
             << num(info.asymmetry) << "," << num(st.kurtosis.value_or(0.0)) << "\n";
        const Histogram h = histogram(*p.tensor, 64);
        std::ostringstream hist;
        for (std::size_t i = 0; i < h.counts.size(); ++i) {
          hist << num(h.bin_center(i)) << " " << h.counts[i] << "\n";
        }
        write_text_atomic(
            (fs::path(opts.out_dir) / ("hist_" + std::string(side) + "_" + p.layer + ".txt"))
                .string(),
            hist.str());
      }
    };
    emit_side("a", a.model);
    emit_side("b", b.model);
    write_text_atomic((fs::path(opts.out_dir) / "skew.csv").string(), skew.str());
    std::cout << "report written to " << opts.out_dir << "\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_verify(const CommandOptions& opts) {
  std::vector<SuiteResult> results;
  const std::string& s = opts.suite;
  if (s != "grad" && s != "limits" && s != "palette" && s != "all") {
    std::cerr << "error: --suite must be one of grad|limits|palette|all\n";
    return 2;
  }
  if (s == "grad" || s == "all") {
    const auto r = run_grad_suite();
    results.insert(results.end(), r.begin(), r.end());
  }
  if (s == "limits" || s == "all") {
    const auto r = run_limits_suite();
    results.insert(results.end(), r.begin(), r.end());
  }
  if (s == "palette" || s == "all") {
    const auto r = run_palette_suite();
    results.insert(results.end(), r.begin(), r.end());
  }
  for (const SuiteResult& r : results) {
    std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << " — " << r.detail << "\n";
  }
  return all_passed(results) ? 0 : 1;
}

}  // namespace r2lab

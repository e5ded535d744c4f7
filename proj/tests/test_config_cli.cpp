// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "r2lab/config.hpp"
#include "r2lab/verify.hpp"

using namespace r2lab;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(R2LAB_CLI_PATH) + " " + args + " >" + log.string() +
                          " 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

fs::path work_dir() {
  const fs::path dir = fs::temp_directory_path() / "r2lab_cli_test";
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("defaults follow the published recipe") {
  const ExperimentConfig cfg = parse_config(json::object());
  CHECK(cfg.train.momentum == 0.9);
  CHECK(cfg.train.weight_decay == 1e-4);
  CHECK(cfg.train.nesterov == true);
  CHECK(cfg.train.reg.lambda == 0.01);
  CHECK(cfg.train.reg.alpha_init == 0.1);
  CHECK(cfg.train.reg.kind == RegKind::None);
  CHECK(cfg.model.arch() == "mlp:784-128-64-10");
}

TEST_CASE("unknown keys are rejected with their field path") {
  try {
    parse_config(json{{"train", {{"lrr", 0.1}}}});
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("train.lrr") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config(json{{"nonsense", json::object()}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"reg", {{"kind", "l0"}}}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"train", {{"lr", "fast"}}}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"data", {{"kind", "imagenet"}}}}), ConfigError);
}

TEST_CASE("validation happens before compute") {
  ExperimentConfig cfg = parse_config(json::object());
  cfg.train.lr = -1.0;
  CHECK_THROWS_AS(cfg.train.validate(), ConfigError);

  // idx needs all four paths
  CHECK_THROWS_AS(parse_config(json{{"data", {{"kind", "idx"}}}}), ConfigError);
}

TEST_CASE("compat hash tracks model and data sections only") {
  ExperimentConfig a = parse_config(json::object());
  ExperimentConfig b = a;
  b.train.lr *= 2;  // training knobs do not affect checkpoint compatibility
  CHECK(a.compat_hash() == b.compat_hash());
  b.data.seed += 1;
  CHECK(a.compat_hash() != b.compat_hash());
}

TEST_CASE("cli: qat without --init exits 2 and names the flag") {
  const fs::path dir = work_dir();
  const fs::path cfg_path = dir / "cfg.json";
  {
    std::ofstream out(cfg_path);
    out << R"({"data": {"dim": 16, "n_train": 64, "n_test": 32, "classes": 4},
               "model": {"dims": [16, 4]}, "train": {"epochs": 1}})";
  }
  const fs::path log = dir / "qat.log";
  const int code = run_cli("qat --config " + cfg_path.string() + " --out " +
                               (dir / "out").string(),
                           log);
  CHECK(code == 2);
  CHECK(slurp(log).find("--init") != std::string::npos);
}

TEST_CASE("cli: invalid config exits 2 with the field path") {
  const fs::path dir = work_dir();
  const fs::path cfg_path = dir / "bad.json";
  {
    std::ofstream out(cfg_path);
    out << R"({"train": {"epochz": 3}})";
  }
  const fs::path log = dir / "bad.log";
  const int code =
      run_cli("pretrain --config " + cfg_path.string() + " --out " + (dir / "o").string(), log);
  CHECK(code == 2);
  CHECK(slurp(log).find("train.epochz") != std::string::npos);
}

TEST_CASE("cli: pretrain writes checkpoint, metrics, summary, config echo") {
  const fs::path dir = work_dir();
  const fs::path cfg_path = dir / "run.json";
  {
    std::ofstream out(cfg_path);
    out << R"({"data": {"dim": 16, "n_train": 96, "n_test": 48, "classes": 4, "hot_dims": 0},
               "model": {"dims": [16, 8, 4]},
               "train": {"epochs": 2, "batch_size": 32, "seed": 5}})";
  }
  const fs::path out_dir = dir / "run_out";
  fs::remove_all(out_dir);
  const int code = run_cli(
      "pretrain --config " + cfg_path.string() + " --out " + out_dir.string(), dir / "run.log");
  REQUIRE(code == 0);
  CHECK(fs::exists(out_dir / "checkpoint.json"));
  CHECK(fs::exists(out_dir / "checkpoint.blob"));
  CHECK(fs::exists(out_dir / "summary.txt"));
  CHECK(fs::exists(out_dir / "config.json"));

  const std::string metrics = slurp(out_dir / "metrics.csv");
  CHECK(metrics.find("epoch,lr,task_loss,reg_loss,test_accuracy") == 0);
  CHECK(slurp(out_dir / "summary.txt").find("seed: 5") != std::string::npos);

  // resolved config echo carries the applied defaults
  json echo;
  {
    std::ifstream in(out_dir / "config.json");
    in >> echo;
  }
  CHECK(echo["train"]["momentum"] == 0.9);
  CHECK(echo["train"]["seed"] == 5);
}

TEST_CASE("cli: report on one checkpoint against itself gives unit ratios") {
  const fs::path dir = work_dir();
  const fs::path ck = dir / "run_out" / "checkpoint";
  REQUIRE(fs::exists(dir / "run_out" / "checkpoint.json"));  // produced above
  const fs::path rep = dir / "report_out";
  fs::remove_all(rep);
  const int code = run_cli(
      "report --a " + ck.string() + " --b " + ck.string() + " --out " + rep.string(),
      dir / "report.log");
  REQUIRE(code == 0);
  const std::string table = slurp(rep / "stats_table.csv");
  CHECK(table.find("layer,range_a,range_b,range_ratio") == 0);
  CHECK(table.find(",1,") != std::string::npos);  // ratio exactly 1
  CHECK(fs::exists(rep / "hist_a_fc1.txt"));
  CHECK(fs::exists(rep / "skew.csv"));
}

TEST_CASE("cli: verify flags bad suites and mutation is caught") {
  const fs::path dir = work_dir();
  CHECK(run_cli("verify --suite bogus", dir / "v.log") == 2);
  // oracle sensitivity: an injected sign error in the margin gradient fails
  GradSuiteOptions opts;
  opts.instances = 5;
  opts.mutate_margin_sign = true;
  const auto results = run_grad_suite(opts);
  bool margin_failed = false;
  for (const auto& r : results) {
    if (r.name == "grad.margin.dw") margin_failed = !r.pass;
  }
  CHECK(margin_failed);
}

// SPDX-License-Identifier: Apache-2.0
#include "r2lab/config.hpp"

#include <fstream>
#include <set>

#include "r2lab/checkpoint.hpp"

namespace r2lab {

using nlohmann::json;

namespace {

/// Wraps one JSON object and tracks which keys get consumed so leftovers
/// can be reported with their field path.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: " + path_ + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    seen_.insert(key);
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config: bad value type at " + path_ + "." + key);
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) {
        throw ConfigError("config: unknown key " + path_ + "." + key);
      }
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

std::string ModelConfig::arch() const {
  if (kind == "mlp") {
    std::string a = "mlp:";
    for (std::size_t i = 0; i < dims.size(); ++i) {
      if (i) a += "-";
      a += std::to_string(dims[i]);
    }
    return a;
  }
  if (kind == "cnn") {
    return "cnn:" + std::to_string(in_c) + "x" + std::to_string(in_h) + "x" +
           std::to_string(in_w) + "-" + std::to_string(conv1) + "-" + std::to_string(conv2) +
           "-" + std::to_string(classes);
  }
  throw ConfigError("config: unknown model.kind '" + kind + "'");
}

ExperimentConfig parse_config(const json& j) {
  ExperimentConfig cfg;
  Section root(j, "");

  if (root.has("model")) {
    Section s(j.at("model"), "model");
    s.get("kind", cfg.model.kind);
    s.get("dims", cfg.model.dims);
    s.get("in_c", cfg.model.in_c);
    s.get("in_h", cfg.model.in_h);
    s.get("in_w", cfg.model.in_w);
    s.get("conv1", cfg.model.conv1);
    s.get("conv2", cfg.model.conv2);
    s.get("classes", cfg.model.classes);
    s.finish();
  }
  if (root.has("data")) {
    Section s(j.at("data"), "data");
    s.get("kind", cfg.data.kind);
    s.get("n_train", cfg.data.n_train);
    s.get("n_test", cfg.data.n_test);
    s.get("classes", cfg.data.classes);
    s.get("dim", cfg.data.dim);
    s.get("seed", cfg.data.seed);
    s.get("mean_spread", cfg.data.mean_spread);
    s.get("noise_std", cfg.data.noise_std);
    s.get("hot_dims", cfg.data.hot_dims);
    s.get("hot_boost", cfg.data.hot_boost);
    s.get("train_images", cfg.data.train_images);
    s.get("train_labels", cfg.data.train_labels);
    s.get("test_images", cfg.data.test_images);
    s.get("test_labels", cfg.data.test_labels);
    s.finish();
  }
  if (root.has("train")) {
    Section s(j.at("train"), "train");
    s.get("lr", cfg.train.lr);
    s.get("momentum", cfg.train.momentum);
    s.get("weight_decay", cfg.train.weight_decay);
    s.get("nesterov", cfg.train.nesterov);
    s.get("epochs", cfg.train.epochs);
    s.get("batch_size", cfg.train.batch_size);
    s.get("seed", cfg.train.seed);
    std::string schedule = schedule_name(cfg.train.schedule);
    s.get("schedule", schedule);
    cfg.train.schedule = schedule_from(schedule);
    s.finish();
  }
  if (root.has("reg")) {
    Section s(j.at("reg"), "reg");
    std::string kind = reg_kind_name(cfg.train.reg.kind);
    s.get("kind", kind);
    cfg.train.reg.kind = reg_kind_from(kind);
    s.get("lambda", cfg.train.reg.lambda);
    s.get("alpha_init", cfg.train.reg.alpha_init);
    s.finish();
  }
  if (root.has("quant")) {
    Section s(j.at("quant"), "quant");
    std::string method = quant_method_name(cfg.train.quant.method);
    s.get("method", method);
    cfg.train.quant.method = quant_method_from(method);
    s.get("bits", cfg.train.quant.bits);
    s.get("act_bits", cfg.train.quant.act_bits);
    s.get("act_clip_init", cfg.train.quant.act_clip_init);
    s.get("ewgs_delta", cfg.train.quant.ewgs_delta);
    s.finish();
  }
  if (root.has("palette")) {
    Section s(j.at("palette"), "palette");
    s.get("bits", cfg.train.palette.bits);
    int dim = static_cast<int>(cfg.train.palette.dim);
    s.get("dim", dim);
    if (dim < 1) throw ConfigError("config: palette.dim must be >= 1");
    cfg.train.palette.dim = static_cast<std::size_t>(dim);
    s.get("tau", cfg.train.palette.tau);
    s.get("kmeans_iters", cfg.train.palette.kmeans_iters);
    s.get("kmeans_tol", cfg.train.palette.kmeans_tol);
    s.finish();
  }
  if (root.has("report")) {
    Section s(j.at("report"), "report");
    s.get("histogram_bins", cfg.report.histogram_bins);
    s.finish();
  }
  // mark consumed top-level sections
  {
    static const std::set<std::string> known = {"model", "data",    "train", "reg",
                                                "quant", "palette", "report"};
    for (const auto& [key, value] : j.items()) {
      if (!known.count(key)) throw ConfigError("config: unknown key ." + key);
    }
  }

  // validation before any compute
  cfg.model.arch();
  if (cfg.data.kind != "synth" && cfg.data.kind != "idx") {
    throw ConfigError("config: data.kind must be 'synth' or 'idx'");
  }
  if (cfg.data.kind == "idx" &&
      (cfg.data.train_images.empty() || cfg.data.train_labels.empty() ||
       cfg.data.test_images.empty() || cfg.data.test_labels.empty())) {
    throw ConfigError("config: data.kind=idx requires all four file paths");
  }
  if (cfg.report.histogram_bins < 1) throw ConfigError("config: report.histogram_bins must be >= 1");
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config: parse error in " + path + ": " + e.what());
  }
  return parse_config(j);
}

json ExperimentConfig::to_json() const {
  json j;
  j["model"] = {{"kind", model.kind}, {"dims", model.dims},   {"in_c", model.in_c},
                {"in_h", model.in_h}, {"in_w", model.in_w},   {"conv1", model.conv1},
                {"conv2", model.conv2}, {"classes", model.classes}};
  j["data"] = {{"kind", data.kind},
               {"n_train", data.n_train},
               {"n_test", data.n_test},
               {"classes", data.classes},
               {"dim", data.dim},
               {"seed", data.seed},
               {"mean_spread", data.mean_spread},
               {"noise_std", data.noise_std},
               {"hot_dims", data.hot_dims},
               {"hot_boost", data.hot_boost},
               {"train_images", data.train_images},
               {"train_labels", data.train_labels},
               {"test_images", data.test_images},
               {"test_labels", data.test_labels}};
  j["train"] = {{"lr", train.lr},
                {"momentum", train.momentum},
                {"weight_decay", train.weight_decay},
                {"nesterov", train.nesterov},
                {"epochs", train.epochs},
                {"batch_size", train.batch_size},
                {"seed", train.seed},
                {"schedule", schedule_name(train.schedule)}};
  j["reg"] = {{"kind", reg_kind_name(train.reg.kind)},
              {"lambda", train.reg.lambda},
              {"alpha_init", train.reg.alpha_init}};
  j["quant"] = {{"method", quant_method_name(train.quant.method)},
                {"bits", train.quant.bits},
                {"act_bits", train.quant.act_bits},
                {"act_clip_init", train.quant.act_clip_init},
                {"ewgs_delta", train.quant.ewgs_delta}};
  j["palette"] = {{"bits", train.palette.bits},
                  {"dim", train.palette.dim},
                  {"tau", train.palette.tau},
                  {"kmeans_iters", train.palette.kmeans_iters},
                  {"kmeans_tol", train.palette.kmeans_tol}};
  j["report"] = {{"histogram_bins", report.histogram_bins}};
  return j;
}

std::string ExperimentConfig::compat_hash() const {
  const json j = to_json();
  return fnv1a64_hex(json{{"model", j["model"]}, {"data", j["data"]}}.dump());
}

namespace {

Dataset load_synth(const DataConfig& d, std::size_t n, const std::string& split) {
  SynthSpec spec;
  spec.n = n;
  spec.classes = d.classes;
  spec.dim = d.dim;
  spec.seed = d.seed;
  spec.mean_spread = d.mean_spread;
  spec.noise_std = d.noise_std;
  spec.hot_dims = d.hot_dims;
  spec.hot_boost = d.hot_boost;
  spec.split = split;
  return synth_gaussian(spec);
}

}  // namespace

Dataset ExperimentConfig::load_train() const {
  if (data.kind == "synth") return load_synth(data, data.n_train, "train");
  Dataset ds = load_idx(data.train_images, data.train_labels);
  ds.split = "train";
  return ds;
}

Dataset ExperimentConfig::load_test() const {
  if (data.kind == "synth") return load_synth(data, data.n_test, "test");
  Dataset ds = load_idx(data.test_images, data.test_labels);
  ds.split = "test";
  return ds;
}

}  // namespace r2lab

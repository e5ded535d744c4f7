// SPDX-License-Identifier: Apache-2.0
#include "r2lab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "r2lab/analytics.hpp"
#include "r2lab/rng.hpp"

namespace r2lab {

std::string phase_name(Phase p) {
  switch (p) {
    case Phase::Pretrain: return "pretrain";
    case Phase::Qat: return "qat";
    case Phase::Compress: return "compress";
  }
  return "pretrain";
}

Phase phase_from(const std::string& name) {
  if (name == "pretrain") return Phase::Pretrain;
  if (name == "qat") return Phase::Qat;
  if (name == "compress") return Phase::Compress;
  throw ConfigError("unknown phase '" + name + "'");
}

LrSchedule schedule_from(const std::string& name) {
  if (name == "cosine") return LrSchedule::Cosine;
  if (name == "step") return LrSchedule::Step;
  if (name == "constant") return LrSchedule::Constant;
  throw ConfigError("unknown lr schedule '" + name + "'");
}

std::string schedule_name(LrSchedule s) {
  switch (s) {
    case LrSchedule::Cosine: return "cosine";
    case LrSchedule::Step: return "step";
    case LrSchedule::Constant: return "constant";
  }
  return "cosine";
}

void TrainConfig::validate() const {
  if (lr <= 0.0) throw ConfigError("train.lr must be positive");
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train.momentum must be in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
  if (reg.lambda < 0.0) throw ConfigError("reg.lambda must be >= 0");
  if (quant.bits < 1 || quant.bits > 8) throw ConfigError("quant.bits must be in [1, 8]");
  if (quant.act_bits < 0 || quant.act_bits > 8) throw ConfigError("quant.act_bits must be in [0, 8]");
  if (quant.ewgs_delta < 0.0) throw ConfigError("quant.ewgs_delta must be >= 0");
  if (palette.bits < 1 || palette.bits > 8) throw ConfigError("palette.bits must be in [1, 8]");
  if (palette.dim < 1) throw ConfigError("palette.dim must be >= 1");
  if (palette.tau <= 0.0) throw ConfigError("palette.tau must be positive");
  if (palette.kmeans_iters < 1) throw ConfigError("palette.kmeans_iters must be >= 1");
  if (phase != Phase::Pretrain && reg.kind != RegKind::None) {
    throw ConfigError("regularizers apply to the pretrain phase only");
  }
}

double lr_schedule(std::size_t step, std::size_t total_steps, LrSchedule schedule, double lr0) {
  if (total_steps == 0) return lr0;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  switch (schedule) {
    case LrSchedule::Cosine:
      return lr0 * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
    case LrSchedule::Step: {
      double f = 1.0;
      if (t >= 0.5) f *= 0.1;
      if (t >= 0.75) f *= 0.1;
      return lr0 * f;
    }
    case LrSchedule::Constant:
      return lr0;
  }
  return lr0;
}

SgdOptimizer::SgdOptimizer(std::vector<Item> items, double momentum, double weight_decay,
                           bool nesterov)
    : items_(std::move(items)),
      momentum_(momentum),
      weight_decay_(weight_decay),
      nesterov_(nesterov) {
  velocity_.reserve(items_.size());
  for (const Item& it : items_) velocity_.emplace_back(it.tensor->size(), 0.0);
}

void SgdOptimizer::zero_grads() {
  for (Item& it : items_) {
    it.tensor->ensure_grad();
    it.tensor->zero_grad();
  }
}

void SgdOptimizer::step(double lr) {
  for (std::size_t p = 0; p < items_.size(); ++p) {
    Item& it = items_[p];
    Tensor& t = *it.tensor;
    const std::vector<double>& grad = t.grad();
    std::vector<double>& vel = velocity_[p];
    const double wd = it.decay ? weight_decay_ : 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double g = grad[i] + wd * t[i];
      vel[i] = momentum_ * vel[i] + g;
      const double d = nesterov_ ? g + momentum_ * vel[i] : vel[i];
      t[i] -= lr * d;
      if (it.has_floor && t[i] < it.floor) t[i] = it.floor;
    }
  }
}

namespace {

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    std::swap(idx[i - 1], idx[rng.index(i)]);
  }
  return idx;
}

std::vector<LayerRange> collect_layer_ranges(Model& model) {
  std::vector<LayerRange> out;
  for (const ParamRef& p : model.weight_params()) {
    const LayerStats s = layer_stats(p.layer, *p.tensor);
    out.push_back({p.layer, s.range, s.std_dev});
  }
  return out;
}

struct BatchPlan {
  std::size_t steps_per_epoch;
  std::size_t total_steps;
};

BatchPlan plan_batches(const TrainConfig& cfg, std::size_t n) {
  if (n == 0) throw DomainError("trainer: empty training set");
  BatchPlan plan;
  plan.steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  plan.total_steps = plan.steps_per_epoch * static_cast<std::size_t>(cfg.epochs);
  return plan;
}

}  // namespace

double evaluate_accuracy(Model& model, const Dataset& data, std::size_t batch_size) {
  if (data.n() == 0) throw DomainError("evaluate: empty dataset");
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.n(); start += batch_size) {
    const std::size_t stop = std::min(data.n(), start + batch_size);
    std::vector<std::size_t> idx(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    Tape tape;
    Value x = tape.input(data.batch_images(idx));
    Value logits = model.forward(tape, x);
    const Tensor& out = tape.value(logits);
    const std::size_t classes = out.extent(1);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < classes; ++c) {
        if (out.at(r, c) > out.at(r, best)) best = c;
      }
      if (static_cast<int>(best) == data.labels[idx[r]]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.n());
}

void assert_on_grid(const Tensor& w, const QuantState& q) {
  const double lo = -static_cast<double>(q.qn());
  const double hi = std::max(static_cast<double>(q.qp()), 0.0);
  for (double v : w.values()) {
    const double level = v / q.step;
    if (level < lo - 1e-9 || level > hi + 1e-9 ||
        std::fabs(level - round_half_away(level)) > 1e-9) {
      throw NumericError("quantized eval: weight off the quantization grid");
    }
  }
}

RunResult run_pretrain(const TrainConfig& cfg, const std::string& arch, const Dataset& train,
                       const Dataset& test) {
  cfg.validate();
  if (cfg.phase != Phase::Pretrain) throw ConfigError("run_pretrain: phase must be pretrain");
  Model model = Model::from_arch(arch);
  model.init_params(cfg.seed);
  RegState reg = make_reg_state(cfg.reg.kind, cfg.reg.lambda, cfg.reg.alpha_init, model);

  std::vector<SgdOptimizer::Item> items;
  for (const ParamRef& p : model.parameters()) items.push_back({p.tensor, true, 0.0, false});
  for (auto& [layer, m] : reg.margin) items.push_back({&m, false, 0.0, false});
  for (auto& [layer, a] : reg.alpha) items.push_back({&a, false, RegState::kAlphaMin, true});
  SgdOptimizer opt(std::move(items), cfg.momentum, cfg.weight_decay, cfg.nesterov);

  const BatchPlan plan = plan_batches(cfg, train.n());
  Rng shuffle_rng = Rng(cfg.seed).fork(0x7368756666ULL);
  RunResult res;
  std::size_t global_step = 0;
  double lr = cfg.lr;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled_indices(train.n(), shuffle_rng);
    double task_sum = 0.0, reg_sum = 0.0;
    for (std::size_t start = 0; start < train.n(); start += cfg.batch_size) {
      const std::size_t stop = std::min(train.n(), start + cfg.batch_size);
      const std::vector<std::size_t> idx(order.begin() + start, order.begin() + stop);

      Tape tape;
      ForwardRecord rec;
      Value x = tape.input(train.batch_images(idx));
      Value logits = model.forward(tape, x, nullptr, &rec);
      Value task = tape.softmax_ce(logits, train.batch_labels(idx));
      Value total = total_loss(tape, task, reg, model, rec.weight_leaf);

      opt.zero_grads();
      tape.backward(total);
      lr = lr_schedule(global_step, plan.total_steps, cfg.schedule, cfg.lr);
      opt.step(lr);
      reg.clamp_alpha();
      ++global_step;

      task_sum += tape.value(task).scalar_value();
      reg_sum += tape.value(total).scalar_value() - tape.value(task).scalar_value();
    }
    EpochRecord rec_out;
    rec_out.epoch = epoch + 1;
    rec_out.lr = lr;
    rec_out.task_loss = task_sum / static_cast<double>(plan.steps_per_epoch);
    rec_out.reg_loss = reg_sum / static_cast<double>(plan.steps_per_epoch);
    rec_out.test_accuracy = evaluate_accuracy(model, test, cfg.batch_size);
    rec_out.layer_stats = collect_layer_ranges(model);
    res.epochs.push_back(std::move(rec_out));
  }

  res.final_accuracy = res.epochs.back().test_accuracy;
  res.checkpoint.arch = arch;
  res.checkpoint.phase = "pretrain";
  res.checkpoint.seed = cfg.seed;
  res.checkpoint.model = std::move(model);
  res.checkpoint.reg = std::move(reg);
  return res;
}

namespace {

struct LayerQuant {
  std::string layer;
  Tensor step;  // scalar, learnable under lsq/ewgs
  QuantState state;
};

Value quant_weight_node(Tape& tape, Value w_leaf, Value step_leaf, LayerQuant& lq,
                        QuantMethod method, std::size_t n_weights) {
  const Tensor& w = tape.value(w_leaf);
  lq.state.step = tape.value(step_leaf).scalar_value();
  Tensor w_hat = fake_quant_weight(w, lq.state);
  QuantState snap = lq.state;
  auto back = [snap, method, n_weights](const Tensor& out, const std::vector<double>& dout,
                                        const std::vector<const Tensor*>& in,
                                        const std::vector<std::vector<double>*>& din) {
    Tensor upstream(out.shape());
    std::copy(dout.begin(), dout.end(), upstream.values().begin());
    const Tensor& w = *in[0];
    switch (method) {
      case QuantMethod::Ste: {
        const Tensor dw = ste_backward(upstream, w, snap);
        if (din[0]) {
          for (std::size_t i = 0; i < dw.size(); ++i) (*din[0])[i] += dw[i];
        }
        break;
      }
      case QuantMethod::Lsq: {
        const LsqGrads g = lsq_grads(upstream, w, snap, n_weights);
        if (din[0]) {
          for (std::size_t i = 0; i < g.dw.size(); ++i) (*din[0])[i] += g.dw[i];
        }
        if (din[1]) (*din[1])[0] += g.ds;
        break;
      }
      case QuantMethod::Ewgs: {
        const LsqGrads g = lsq_grads(upstream, w, snap, n_weights);
        const Tensor scaled = ewgs_scale(upstream, w, out, snap.ewgs_delta);
        const Tensor dw = ste_backward(scaled, w, snap);
        if (din[0]) {
          for (std::size_t i = 0; i < dw.size(); ++i) (*din[0])[i] += dw[i];
        }
        if (din[1]) (*din[1])[0] += g.ds;
        break;
      }
    }
  };
  return tape.custom("fake_quant", {w_leaf, step_leaf}, std::move(w_hat), back);
}

// PACT clip followed by a uniform fake quantizer on [0, clip]; straight
// through the rounding, clip gradient from the saturated elements.
Value act_quant_node(Tape& tape, Value x, Value clip_leaf, int act_bits) {
  const Tensor& xv = tape.value(x);
  const double clip = tape.value(clip_leaf).scalar_value();
  const double levels = static_cast<double>((1 << act_bits) - 1);
  const double sa = clip / levels;
  Tensor y = pact_clip(xv, clip);
  for (double& v : y.values()) v = round_half_away(v / sa) * sa;
  auto back = [clip](const Tensor&, const std::vector<double>& dout,
                     const std::vector<const Tensor*>& in,
                     const std::vector<std::vector<double>*>& din) {
    Tensor upstream(in[0]->shape());
    std::copy(dout.begin(), dout.end(), upstream.values().begin());
    const PactGrads g = pact_clip_grads(upstream, *in[0], clip);
    if (din[0]) {
      for (std::size_t i = 0; i < g.dx.size(); ++i) (*din[0])[i] += g.dx[i];
    }
    if (din[1]) (*din[1])[0] += g.dclip;
  };
  return tape.custom("act_quant", {x, clip_leaf}, std::move(y), back);
}

}  // namespace

RunResult run_qat(const TrainConfig& cfg, const Checkpoint& init, const Dataset& train,
                  const Dataset& test) {
  cfg.validate();
  if (cfg.phase != Phase::Qat) throw ConfigError("run_qat: phase must be qat");
  Model model = init.model;
  const QuantMethod method = cfg.quant.method;
  const bool learn_step = method != QuantMethod::Ste;

  // all layers quantized, first and last included
  std::vector<LayerQuant> lq;
  for (const ParamRef& p : model.weight_params()) {
    LayerQuant q;
    q.layer = p.layer;
    q.state.bits = cfg.quant.bits;
    q.state.ewgs_delta = cfg.quant.ewgs_delta;
    const auto it = init.quant.step.find(p.layer);
    double s;
    if (it != init.quant.step.end() && init.quant.bits == cfg.quant.bits && it->second > 0.0) {
      s = it->second;
    } else {
      s = init_step_statistical(*p.tensor, cfg.quant.bits);
    }
    q.step = Tensor::scalar(s);
    lq.push_back(std::move(q));
  }

  std::map<std::string, Tensor> act_clips;
  if (cfg.quant.act_bits > 0) {
    for (const Layer& l : model.layers()) {
      if (l.kind != LayerKind::Relu) continue;
      const auto it = init.quant.act_clip.find(l.name);
      act_clips.emplace(l.name, Tensor::scalar(it != init.quant.act_clip.end() && it->second > 0.0
                                                   ? it->second
                                                   : cfg.quant.act_clip_init));
    }
  }

  std::vector<SgdOptimizer::Item> items;
  for (const ParamRef& p : model.parameters()) items.push_back({p.tensor, true, 0.0, false});
  if (learn_step) {
    for (LayerQuant& q : lq) items.push_back({&q.step, false, 1e-8, true});
  }
  for (auto& [name, clip] : act_clips) items.push_back({&clip, false, 1e-6, true});
  SgdOptimizer opt(std::move(items), cfg.momentum, cfg.weight_decay, cfg.nesterov);

  RunResult res;
  res.init_accuracy = evaluate_accuracy(model, test, cfg.batch_size);

  auto hard_eval = [&]() {
    Model eval_model = model;
    for (std::size_t i = 0; i < lq.size(); ++i) {
      Layer& l = eval_model.layer_named(lq[i].layer);
      QuantState qs = lq[i].state;
      qs.step = lq[i].step.scalar_value();
      l.weight = fake_quant_weight(l.weight, qs);
      assert_on_grid(l.weight, qs);
    }
    return evaluate_accuracy(eval_model, test, cfg.batch_size);
  };

  ForwardHooks hooks;
  std::map<std::string, std::size_t> lq_index;
  for (std::size_t i = 0; i < lq.size(); ++i) lq_index[lq[i].layer] = i;
  std::map<std::string, Value> step_leaves;  // rebuilt per tape
  hooks.weight = [&](Tape& tape, const Layer& layer, Value leaf) {
    LayerQuant& q = lq[lq_index.at(layer.name)];
    Value step_leaf = tape.param(q.step);
    return quant_weight_node(tape, leaf, step_leaf, q, method, layer.weight.size());
  };
  if (cfg.quant.act_bits > 0) {
    hooks.activation = [&](Tape& tape, const Layer& layer, Value x) {
      Value clip_leaf = tape.param(act_clips.at(layer.name));
      return act_quant_node(tape, x, clip_leaf, cfg.quant.act_bits);
    };
  }

  const BatchPlan plan = plan_batches(cfg, train.n());
  Rng shuffle_rng = Rng(cfg.seed).fork(0x7368756666ULL);
  std::size_t global_step = 0;
  double lr = cfg.lr;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled_indices(train.n(), shuffle_rng);
    double task_sum = 0.0;
    for (std::size_t start = 0; start < train.n(); start += cfg.batch_size) {
      const std::size_t stop = std::min(train.n(), start + cfg.batch_size);
      const std::vector<std::size_t> idx(order.begin() + start, order.begin() + stop);

      Tape tape;
      Value x = tape.input(train.batch_images(idx));
      Value logits = model.forward(tape, x, &hooks);
      Value task = tape.softmax_ce(logits, train.batch_labels(idx));

      opt.zero_grads();
      tape.backward(task);
      lr = lr_schedule(global_step, plan.total_steps, cfg.schedule, cfg.lr);
      opt.step(lr);
      ++global_step;
      task_sum += tape.value(task).scalar_value();
    }
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = lr;
    rec.task_loss = task_sum / static_cast<double>(plan.steps_per_epoch);
    rec.test_accuracy = hard_eval();
    rec.layer_stats = collect_layer_ranges(model);
    res.epochs.push_back(std::move(rec));
  }

  res.final_accuracy = res.epochs.back().test_accuracy;
  res.checkpoint.arch = init.arch;
  res.checkpoint.phase = "qat";
  res.checkpoint.seed = cfg.seed;
  res.checkpoint.model = model;
  res.checkpoint.quant.method = quant_method_name(method);
  res.checkpoint.quant.bits = cfg.quant.bits;
  res.checkpoint.quant.act_bits = cfg.quant.act_bits;
  res.checkpoint.quant.ewgs_delta = cfg.quant.ewgs_delta;
  for (const LayerQuant& q : lq) res.checkpoint.quant.step[q.layer] = q.step.scalar_value();
  for (const auto& [name, clip] : act_clips) {
    res.checkpoint.quant.act_clip[name] = clip.scalar_value();
  }
  return res;
}

RunResult run_compress(const TrainConfig& cfg, const Checkpoint& init, const Dataset& train,
                       const Dataset& test) {
  cfg.validate();
  if (cfg.phase != Phase::Compress) throw ConfigError("run_compress: phase must be compress");
  Model model = init.model;
  const std::size_t k = std::size_t(1) << cfg.palette.bits;
  const std::size_t d = cfg.palette.dim;

  struct LayerPalette {
    std::string layer;
    std::vector<double> codebook;
  };
  std::vector<LayerPalette> lp;
  for (const ParamRef& p : model.weight_params()) {
    const Groups groups = group_weights(*p.tensor, d);
    if (k > groups.count) {
      throw ConfigError("compress: layer '" + p.layer + "' has " +
                        std::to_string(groups.count) + " groups but the palette needs " +
                        std::to_string(k));
    }
    const KmeansResult km =
        kmeans_fit(groups, k, cfg.palette.kmeans_iters, cfg.palette.kmeans_tol, cfg.seed);
    lp.push_back({p.layer, km.codebook});
  }
  std::map<std::string, std::size_t> lp_index;
  for (std::size_t i = 0; i < lp.size(); ++i) lp_index[lp[i].layer] = i;

  std::vector<SgdOptimizer::Item> items;
  for (const ParamRef& p : model.parameters()) items.push_back({p.tensor, true, 0.0, false});
  SgdOptimizer opt(std::move(items), cfg.momentum, cfg.weight_decay, cfg.nesterov);

  RunResult res;
  res.init_accuracy = evaluate_accuracy(model, test, cfg.batch_size);

  ForwardHooks hooks;
  hooks.weight = [&](Tape& tape, const Layer& layer, Value leaf) {
    LayerPalette& pal = lp[lp_index.at(layer.name)];
    const std::vector<double> prev = pal.codebook;
    DkmForward fwd = dkm_forward(layer.weight, prev, k, d, cfg.palette.tau);
    pal.codebook = fwd.codebook;  // carried, detached state
    Tensor recon = fwd.reconstructed;
    auto back = [prev, fwd = std::move(fwd), k, d, tau = cfg.palette.tau](
                    const Tensor&, const std::vector<double>& dout,
                    const std::vector<const Tensor*>& in,
                    const std::vector<std::vector<double>*>& din) {
      if (!din[0]) return;
      Tensor upstream(in[0]->shape());
      std::copy(dout.begin(), dout.end(), upstream.values().begin());
      const Tensor g = dkm_backward(*in[0], prev, fwd, k, d, tau, upstream);
      for (std::size_t i = 0; i < g.size(); ++i) (*din[0])[i] += g[i];
    };
    return tape.custom("dkm", {leaf}, std::move(recon), back);
  };

  auto hard_eval = [&](std::vector<Palette>* palettes_out) {
    Model eval_model = model;
    std::vector<Palette> palettes;
    for (const LayerPalette& pal : lp) {
      Layer& l = eval_model.layer_named(pal.layer);
      Palette p = hard_assign(pal.layer, l.weight, pal.codebook, cfg.palette.bits, d);
      l.weight = palette_reconstruct(p, l.weight.shape());
      palettes.push_back(std::move(p));
    }
    const double acc = evaluate_accuracy(eval_model, test, cfg.batch_size);
    if (palettes_out) {
      *palettes_out = std::move(palettes);
      // snapshot weights become the stored model
      model = std::move(eval_model);
    }
    return acc;
  };

  const BatchPlan plan = plan_batches(cfg, train.n());
  Rng shuffle_rng = Rng(cfg.seed).fork(0x7368756666ULL);
  std::size_t global_step = 0;
  double lr = cfg.lr;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled_indices(train.n(), shuffle_rng);
    double task_sum = 0.0;
    for (std::size_t start = 0; start < train.n(); start += cfg.batch_size) {
      const std::size_t stop = std::min(train.n(), start + cfg.batch_size);
      const std::vector<std::size_t> idx(order.begin() + start, order.begin() + stop);

      Tape tape;
      Value x = tape.input(train.batch_images(idx));
      Value logits = model.forward(tape, x, &hooks);
      Value task = tape.softmax_ce(logits, train.batch_labels(idx));

      opt.zero_grads();
      tape.backward(task);
      lr = lr_schedule(global_step, plan.total_steps, cfg.schedule, cfg.lr);
      opt.step(lr);
      ++global_step;
      task_sum += tape.value(task).scalar_value();
    }
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = lr;
    rec.task_loss = task_sum / static_cast<double>(plan.steps_per_epoch);
    rec.test_accuracy = hard_eval(nullptr);
    rec.layer_stats = collect_layer_ranges(model);
    res.epochs.push_back(std::move(rec));
  }

  std::vector<Palette> palettes;
  res.final_accuracy = hard_eval(&palettes);
  res.epochs.back().test_accuracy = res.final_accuracy;

  std::map<std::string, PaletteSpec> specs;
  for (const LayerPalette& pal : lp) {
    specs[pal.layer] = PaletteSpec{cfg.palette.bits, d};
  }
  res.sizes = size_report(model, specs, 32);

  res.checkpoint.arch = init.arch;
  res.checkpoint.phase = "compress";
  res.checkpoint.seed = cfg.seed;
  res.checkpoint.model = std::move(model);
  res.checkpoint.palettes = std::move(palettes);
  return res;
}

}  // namespace r2lab

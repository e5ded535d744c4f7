// SPDX-License-Identifier: Apache-2.0
#include "r2lab/model.hpp"

#include <cmath>
#include <sstream>

#include "r2lab/rng.hpp"

namespace r2lab {

namespace {

Layer make_linear(const std::string& name, std::size_t in, std::size_t out) {
  Layer l;
  l.kind = LayerKind::Linear;
  l.name = name;
  l.weight = Tensor({in, out});
  l.bias = Tensor({out});
  return l;
}

Layer make_conv(const std::string& name, std::size_t f, std::size_t c, std::size_t k, int stride,
                int pad) {
  Layer l;
  l.kind = LayerKind::Conv2d;
  l.name = name;
  l.weight = Tensor({f, c, k, k});
  l.bias = Tensor({f});
  l.stride = stride;
  l.pad = pad;
  return l;
}

Layer make_plain(LayerKind kind, const std::string& name) {
  Layer l;
  l.kind = kind;
  l.name = name;
  return l;
}

std::vector<std::size_t> parse_dims(const std::string& body, char sep) {
  std::vector<std::size_t> dims;
  std::stringstream ss(body);
  std::string tok;
  while (std::getline(ss, tok, sep)) {
    if (tok.empty()) throw FormatError("arch: empty dimension in '" + body + "'");
    dims.push_back(static_cast<std::size_t>(std::stoull(tok)));
  }
  return dims;
}

}  // namespace

Model Model::mlp(const std::vector<std::size_t>& dims) {
  if (dims.size() < 2) throw DomainError("mlp: need at least input and output dims");
  Model m;
  std::ostringstream arch;
  arch << "mlp:";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) arch << "-";
    arch << dims[i];
  }
  m.arch_ = arch.str();
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const std::string name = "fc" + std::to_string(i + 1);
    m.layers_.push_back(make_linear(name, dims[i], dims[i + 1]));
    if (i + 2 < dims.size()) m.layers_.push_back(make_plain(LayerKind::Relu, name + ".relu"));
  }
  return m;
}

Model Model::cnn(std::size_t in_c, std::size_t in_h, std::size_t in_w, std::size_t f1,
                 std::size_t f2, std::size_t classes) {
  Model m;
  std::ostringstream arch;
  arch << "cnn:" << in_c << "x" << in_h << "x" << in_w << "-" << f1 << "-" << f2 << "-"
       << classes;
  m.arch_ = arch.str();
  m.layers_.push_back(make_conv("conv1", f1, in_c, 3, 2, 1));
  m.layers_.push_back(make_plain(LayerKind::Relu, "conv1.relu"));
  m.layers_.push_back(make_conv("conv2", f2, f1, 3, 2, 1));
  m.layers_.push_back(make_plain(LayerKind::Relu, "conv2.relu"));
  m.layers_.push_back(make_plain(LayerKind::Flatten, "flatten"));
  const std::size_t h1 = (in_h + 1) / 2, w1 = (in_w + 1) / 2;
  const std::size_t h2 = (h1 + 1) / 2, w2 = (w1 + 1) / 2;
  m.layers_.push_back(make_linear("fc", f2 * h2 * w2, classes));
  return m;
}

Model Model::from_arch(const std::string& arch) {
  const auto colon = arch.find(':');
  if (colon == std::string::npos) throw FormatError("arch: missing kind prefix in '" + arch + "'");
  const std::string kind = arch.substr(0, colon);
  const std::string body = arch.substr(colon + 1);
  if (kind == "mlp") {
    return mlp(parse_dims(body, '-'));
  }
  if (kind == "cnn") {
    const auto parts = parse_dims(body, '-');
    if (parts.size() != 4) throw FormatError("arch: expected cnn:CxHxW-f1-f2-classes");
    // first token re-parsed as CxHxW
    const auto chw = parse_dims(body.substr(0, body.find('-')), 'x');
    if (chw.size() != 3) throw FormatError("arch: expected cnn:CxHxW-f1-f2-classes");
    return cnn(chw[0], chw[1], chw[2], parts[1], parts[2], parts[3]);
  }
  throw FormatError("arch: unknown model kind '" + kind + "'");
}

Layer& Model::layer_named(const std::string& name) {
  for (Layer& l : layers_)
    if (l.name == name) return l;
  throw IndexError("model: no layer named '" + name + "'");
}

const Layer& Model::layer_named(const std::string& name) const {
  for (const Layer& l : layers_)
    if (l.name == name) return l;
  throw IndexError("model: no layer named '" + name + "'");
}

void Model::init_params(std::uint64_t seed) {
  Rng rng = Rng(seed).fork(0x6d6f64656cULL);
  for (Layer& l : layers_) {
    if (!l.has_params()) continue;
    std::size_t fan_in = 0;
    if (l.kind == LayerKind::Linear) {
      fan_in = l.weight.extent(0);
    } else {
      fan_in = l.weight.extent(1) * l.weight.extent(2) * l.weight.extent(3);
    }
    const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& v : l.weight.values()) v = rng.normal(0.0, std_dev);
    for (double& v : l.bias.values()) v = 0.0;
  }
}

Value Model::forward(Tape& tape, Value x, const ForwardHooks* hooks, ForwardRecord* record) {
  Value cur = x;
  for (Layer& l : layers_) {
    switch (l.kind) {
      case LayerKind::Linear: {
        const Tensor& v = tape.value(cur);
        if (v.rank() > 2) {
          cur = tape.reshape(cur, {v.extent(0), v.size() / v.extent(0)});
        }
        Value w = tape.param(l.weight);
        if (record) record->weight_leaf[l.name] = w;
        if (hooks && hooks->weight) w = hooks->weight(tape, l, w);
        Value b = tape.param(l.bias);
        cur = tape.add_bias(tape.matmul(cur, w), b);
        break;
      }
      case LayerKind::Conv2d: {
        Value w = tape.param(l.weight);
        if (record) record->weight_leaf[l.name] = w;
        if (hooks && hooks->weight) w = hooks->weight(tape, l, w);
        Value y = tape.conv2d(cur, w, l.stride, l.pad);
        // bias added per output channel via reshape to rows
        const Tensor& v = tape.value(y);
        const std::size_t n = v.extent(0), f = v.extent(1), hw = v.extent(2) * v.extent(3);
        Value flat = tape.reshape(y, {n * f, hw});
        // expand channel bias across spatial positions with a custom op
        Value b = tape.param(l.bias);
        Tensor expanded({n * f, hw});
        const Tensor& bv = tape.value(b);
        const Tensor& fv = tape.value(flat);
        for (std::size_t r = 0; r < n * f; ++r) {
          const double bias_v = bv[r % f];
          for (std::size_t j = 0; j < hw; ++j) expanded[r * hw + j] = fv[r * hw + j] + bias_v;
        }
        auto back = [n, f, hw](const Tensor&, const std::vector<double>& dout,
                               const std::vector<const Tensor*>&,
                               const std::vector<std::vector<double>*>& din) {
          if (din[0]) {
            for (std::size_t i = 0; i < dout.size(); ++i) (*din[0])[i] += dout[i];
          }
          if (din[1]) {
            for (std::size_t r = 0; r < n * f; ++r)
              for (std::size_t j = 0; j < hw; ++j) (*din[1])[r % f] += dout[r * hw + j];
          }
        };
        Value biased = tape.custom("conv_bias", {flat, b}, std::move(expanded), back);
        cur = tape.reshape(biased, v.shape());
        break;
      }
      case LayerKind::Relu: {
        cur = tape.relu(cur);
        if (hooks && hooks->activation) cur = hooks->activation(tape, l, cur);
        break;
      }
      case LayerKind::Flatten: {
        const Tensor& v = tape.value(cur);
        cur = tape.reshape(cur, {v.extent(0), v.size() / v.extent(0)});
        break;
      }
    }
  }
  return cur;
}

std::vector<ParamRef> Model::parameters() {
  std::vector<ParamRef> out;
  for (Layer& l : layers_) {
    if (!l.has_params()) continue;
    out.push_back({l.name + ".weight", l.name, &l.weight, true});
    out.push_back({l.name + ".bias", l.name, &l.bias, false});
  }
  return out;
}

std::vector<ParamRef> Model::weight_params() {
  std::vector<ParamRef> out;
  for (Layer& l : layers_) {
    if (!l.has_params()) continue;
    out.push_back({l.name + ".weight", l.name, &l.weight, true});
  }
  return out;
}

std::size_t Model::param_count() const {
  std::size_t n = 0;
  for (const Layer& l : layers_) {
    if (!l.has_params()) continue;
    n += l.weight.size() + l.bias.size();
  }
  return n;
}

}  // namespace r2lab

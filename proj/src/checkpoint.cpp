// SPDX-License-Identifier: Apache-2.0
#include "r2lab/checkpoint.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace r2lab {

using nlohmann::json;

namespace {

constexpr const char* kFormatTag = "r2lab-checkpoint-v1";

void write_file_atomic(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("checkpoint: cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("checkpoint: short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw FormatError("checkpoint: cannot rename " + tmp + " to " + path);
  }
}

class BlobWriter {
 public:
  std::size_t add_f32(const std::vector<double>& values) {
    const std::size_t offset = bytes_.size();
    for (double v : values) {
      const float f = static_cast<float>(v);
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      bytes_.push_back(static_cast<char>(u & 0xff));
      bytes_.push_back(static_cast<char>((u >> 8) & 0xff));
      bytes_.push_back(static_cast<char>((u >> 16) & 0xff));
      bytes_.push_back(static_cast<char>((u >> 24) & 0xff));
    }
    return offset;
  }

  std::size_t add_raw(const std::vector<std::uint8_t>& raw) {
    const std::size_t offset = bytes_.size();
    for (std::uint8_t b : raw) bytes_.push_back(static_cast<char>(b));
    return offset;
  }

  const std::string& str() const { return bytes_; }

 private:
  std::string bytes_;
};

std::vector<double> read_f32(const std::string& blob, std::size_t offset, std::size_t count) {
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t at = offset + 4 * i;
    const auto b0 = static_cast<std::uint32_t>(static_cast<unsigned char>(blob[at]));
    const auto b1 = static_cast<std::uint32_t>(static_cast<unsigned char>(blob[at + 1]));
    const auto b2 = static_cast<std::uint32_t>(static_cast<unsigned char>(blob[at + 2]));
    const auto b3 = static_cast<std::uint32_t>(static_cast<unsigned char>(blob[at + 3]));
    const std::uint32_t u = b0 | (b1 << 8) | (b2 << 16) | (b3 << 24);
    float f;
    std::memcpy(&f, &u, 4);
    out[i] = static_cast<double>(f);
  }
  return out;
}

struct Slot {
  std::size_t offset;
  std::size_t bytes;
  std::string name;
};

void check_slots(std::vector<Slot> slots, std::size_t blob_size) {
  std::sort(slots.begin(), slots.end(),
            [](const Slot& a, const Slot& b) { return a.offset < b.offset; });
  std::size_t cursor = 0;
  for (const Slot& s : slots) {
    if (s.offset + s.bytes > blob_size) {
      throw CorruptionError("checkpoint: slot '" + s.name + "' exceeds blob size");
    }
    if (s.offset < cursor) {
      throw CorruptionError("checkpoint: slot '" + s.name + "' overlaps a previous slot");
    }
    cursor = s.offset + s.bytes;
  }
}

std::string strip_manifest_suffix(const std::string& path) {
  const std::string suffix = ".json";
  if (path.size() > suffix.size() &&
      path.compare(path.size() - suffix.size(), suffix.size(), suffix) == 0) {
    return path.substr(0, path.size() - suffix.size());
  }
  return path;
}

}  // namespace

std::string fnv1a64_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<std::uint8_t> pack_indices(const std::vector<std::uint32_t>& idx, int bits) {
  if (bits < 1 || bits > 31) throw DomainError("pack_indices: bits must be in [1, 31]");
  std::vector<std::uint8_t> out((idx.size() * static_cast<std::size_t>(bits) + 7) / 8, 0);
  std::size_t bitpos = 0;
  for (std::uint32_t v : idx) {
    if (v >= (1u << bits)) throw DomainError("pack_indices: index out of range for bit width");
    for (int b = 0; b < bits; ++b) {
      if (v & (1u << b)) out[bitpos >> 3] |= static_cast<std::uint8_t>(1u << (bitpos & 7));
      ++bitpos;
    }
  }
  return out;
}

std::vector<std::uint32_t> unpack_indices(const std::vector<std::uint8_t>& bytes, int bits,
                                          std::size_t count) {
  if (bits < 1 || bits > 31) throw DomainError("unpack_indices: bits must be in [1, 31]");
  if (bytes.size() * 8 < count * static_cast<std::size_t>(bits)) {
    throw CorruptionError("unpack_indices: byte buffer too small");
  }
  std::vector<std::uint32_t> out(count, 0);
  std::size_t bitpos = 0;
  for (std::size_t i = 0; i < count; ++i) {
    for (int b = 0; b < bits; ++b) {
      if (bytes[bitpos >> 3] & (1u << (bitpos & 7))) out[i] |= (1u << b);
      ++bitpos;
    }
  }
  return out;
}

void save_checkpoint(const Checkpoint& ck, const std::string& prefix) {
  BlobWriter blob;
  json tensors = json::array();

  auto add_tensor = [&](const std::string& name, const Tensor& t) {
    const std::size_t offset = blob.add_f32(t.values());
    tensors.push_back({{"name", name},
                       {"shape", t.shape()},
                       {"dtype", "f32"},
                       {"offset", offset},
                       {"bytes", t.size() * 4}});
  };

  Model& model = const_cast<Model&>(ck.model);
  for (const ParamRef& p : model.parameters()) add_tensor(p.name, *p.tensor);
  for (const auto& [layer, m] : ck.reg.margin) add_tensor("reg.margin." + layer, m);
  for (const auto& [layer, a] : ck.reg.alpha) add_tensor("reg.alpha." + layer, a);

  json palettes = json::array();
  for (const Palette& p : ck.palettes) {
    const std::size_t cb_offset = blob.add_f32(p.codebook);
    const auto packed = pack_indices(p.assignments, p.bits);
    const std::size_t idx_offset = blob.add_raw(packed);
    palettes.push_back({{"layer", p.layer_name},
                        {"bits", p.bits},
                        {"dim", p.dim},
                        {"pad", p.pad},
                        {"groups", p.assignments.size()},
                        {"codebook_offset", cb_offset},
                        {"codebook_bytes", p.codebook.size() * 4},
                        {"index_offset", idx_offset},
                        {"index_bytes", packed.size()}});
  }

  json manifest;
  manifest["format"] = kFormatTag;
  manifest["arch"] = ck.arch;
  manifest["phase"] = ck.phase;
  manifest["seed"] = ck.seed;
  manifest["config_hash"] = ck.config_hash;
  manifest["tensors"] = tensors;
  manifest["reg"] = {{"kind", reg_kind_name(ck.reg.kind)}, {"lambda", ck.reg.lambda}};
  if (ck.quant.present()) {
    json steps = json::object(), clips = json::object();
    for (const auto& [l, s] : ck.quant.step) steps[l] = s;
    for (const auto& [l, c] : ck.quant.act_clip) clips[l] = c;
    manifest["quant"] = {{"method", ck.quant.method},   {"bits", ck.quant.bits},
                         {"act_bits", ck.quant.act_bits}, {"ewgs_delta", ck.quant.ewgs_delta},
                         {"step", steps},                {"act_clip", clips}};
  }
  manifest["palettes"] = palettes;

  write_file_atomic(prefix + ".blob", blob.str());
  write_file_atomic(prefix + ".json", manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string prefix = strip_manifest_suffix(path);
  std::ifstream mf(prefix + ".json");
  if (!mf) throw FormatError("checkpoint: cannot open " + prefix + ".json");
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: bad manifest: ") + e.what());
  }
  if (manifest.value("format", "") != kFormatTag) {
    throw FormatError("checkpoint: unknown manifest format");
  }

  std::ifstream bf(prefix + ".blob", std::ios::binary);
  if (!bf) throw FormatError("checkpoint: cannot open " + prefix + ".blob");
  std::string blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());

  std::vector<Slot> slots;
  for (const auto& t : manifest.at("tensors")) {
    slots.push_back({t.at("offset").get<std::size_t>(), t.at("bytes").get<std::size_t>(),
                     t.at("name").get<std::string>()});
  }
  for (const auto& p : manifest.value("palettes", json::array())) {
    slots.push_back({p.at("codebook_offset").get<std::size_t>(),
                     p.at("codebook_bytes").get<std::size_t>(),
                     p.at("layer").get<std::string>() + ".codebook"});
    slots.push_back({p.at("index_offset").get<std::size_t>(),
                     p.at("index_bytes").get<std::size_t>(),
                     p.at("layer").get<std::string>() + ".indices"});
  }
  check_slots(slots, blob.size());

  Checkpoint ck;
  ck.arch = manifest.at("arch").get<std::string>();
  ck.phase = manifest.value("phase", "");
  ck.seed = manifest.value("seed", std::uint64_t{0});
  ck.config_hash = manifest.value("config_hash", "");
  ck.model = Model::from_arch(ck.arch);

  struct Record {
    Shape shape;
    std::size_t offset;
  };
  std::map<std::string, Record> records;
  for (const auto& t : manifest.at("tensors")) {
    records[t.at("name").get<std::string>()] = {t.at("shape").get<Shape>(),
                                                t.at("offset").get<std::size_t>()};
  }

  for (ParamRef p : ck.model.parameters()) {
    const auto it = records.find(p.name);
    if (it == records.end()) throw FormatError("checkpoint: missing tensor '" + p.name + "'");
    if (it->second.shape != p.tensor->shape()) {
      throw FormatError("checkpoint: shape mismatch for '" + p.name + "'");
    }
    p.tensor->values() = read_f32(blob, it->second.offset, p.tensor->size());
    p.tensor->check_finite("checkpoint tensor " + p.name);
  }

  ck.reg.kind = reg_kind_from(manifest.at("reg").at("kind").get<std::string>());
  ck.reg.lambda = manifest.at("reg").at("lambda").get<double>();
  for (const auto& [name, rec] : records) {
    const std::string mprefix = "reg.margin.";
    const std::string aprefix = "reg.alpha.";
    if (name.rfind(mprefix, 0) == 0) {
      ck.reg.margin.emplace(name.substr(mprefix.size()),
                            Tensor::scalar(read_f32(blob, rec.offset, 1)[0]));
    } else if (name.rfind(aprefix, 0) == 0) {
      ck.reg.alpha.emplace(name.substr(aprefix.size()),
                           Tensor::scalar(read_f32(blob, rec.offset, 1)[0]));
    }
  }

  if (manifest.contains("quant")) {
    const auto& q = manifest["quant"];
    ck.quant.method = q.at("method").get<std::string>();
    ck.quant.bits = q.at("bits").get<int>();
    ck.quant.act_bits = q.value("act_bits", 0);
    ck.quant.ewgs_delta = q.value("ewgs_delta", 0.1);
    for (const auto& [l, s] : q.value("step", json::object()).items()) {
      ck.quant.step[l] = s.get<double>();
    }
    for (const auto& [l, c] : q.value("act_clip", json::object()).items()) {
      ck.quant.act_clip[l] = c.get<double>();
    }
  }

  for (const auto& pj : manifest.value("palettes", json::array())) {
    Palette p;
    p.layer_name = pj.at("layer").get<std::string>();
    p.bits = pj.at("bits").get<int>();
    p.dim = pj.at("dim").get<std::size_t>();
    p.pad = pj.at("pad").get<std::size_t>();
    const std::size_t groups = pj.at("groups").get<std::size_t>();
    p.codebook = read_f32(blob, pj.at("codebook_offset").get<std::size_t>(), p.k() * p.dim);
    const std::size_t idx_off = pj.at("index_offset").get<std::size_t>();
    const std::size_t idx_bytes = pj.at("index_bytes").get<std::size_t>();
    std::vector<std::uint8_t> packed(idx_bytes);
    for (std::size_t i = 0; i < idx_bytes; ++i) {
      packed[i] = static_cast<std::uint8_t>(blob[idx_off + i]);
    }
    p.assignments = unpack_indices(packed, p.bits, groups);
    for (std::uint32_t a : p.assignments) {
      if (a >= p.k()) throw CorruptionError("checkpoint: palette index out of range");
    }
    ck.palettes.push_back(std::move(p));
  }

  return ck;
}

}  // namespace r2lab

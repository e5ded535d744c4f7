// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "r2lab/checkpoint.hpp"
#include "r2lab/dataset.hpp"
#include "r2lab/trainer.hpp"

using namespace r2lab;
namespace fs = std::filesystem;

namespace {

fs::path test_dir() {
  const fs::path dir = fs::temp_directory_path() / "r2lab_data_io_test";
  fs::create_directories(dir);
  return dir;
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

void push_be32(std::vector<std::uint8_t>& v, std::uint32_t x) {
  v.push_back((x >> 24) & 0xff);
  v.push_back((x >> 16) & 0xff);
  v.push_back((x >> 8) & 0xff);
  v.push_back(x & 0xff);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("idx fixture round trip and error paths") {
  const fs::path dir = test_dir();

  // two 2x2 images with known bytes
  std::vector<std::uint8_t> img;
  push_be32(img, 0x00000803u);
  push_be32(img, 2);
  push_be32(img, 2);
  push_be32(img, 2);
  for (std::uint8_t b : {0, 51, 102, 153, 204, 255, 128, 64}) img.push_back(b);
  std::vector<std::uint8_t> lab;
  push_be32(lab, 0x00000801u);
  push_be32(lab, 2);
  lab.push_back(1);
  lab.push_back(0);
  write_bytes(dir / "img.idx", img);
  write_bytes(dir / "lab.idx", lab);

  const Dataset ds = load_idx((dir / "img.idx").string(), (dir / "lab.idx").string());
  CHECK(ds.n() == 2);
  CHECK(ds.images.shape() == Shape{2, 1, 2, 2});
  CHECK(ds.images[0] == doctest::Approx(0.0));
  CHECK(ds.images[1] == doctest::Approx(51.0 / 255.0));
  CHECK(ds.images[5] == doctest::Approx(1.0));
  CHECK(ds.labels == std::vector<int>{1, 0});

  // truncated pixel payload
  std::vector<std::uint8_t> cut(img.begin(), img.end() - 3);
  write_bytes(dir / "cut.idx", cut);
  CHECK_THROWS_AS(load_idx((dir / "cut.idx").string(), (dir / "lab.idx").string()), FormatError);

  // wrong magic
  std::vector<std::uint8_t> bad = img;
  bad[3] = 0x99;
  write_bytes(dir / "bad.idx", bad);
  CHECK_THROWS_AS(load_idx((dir / "bad.idx").string(), (dir / "lab.idx").string()), FormatError);

  // count mismatch between the files
  std::vector<std::uint8_t> lab3;
  push_be32(lab3, 0x00000801u);
  push_be32(lab3, 3);
  lab3.insert(lab3.end(), {0, 1, 0});
  write_bytes(dir / "lab3.idx", lab3);
  CHECK_THROWS_AS(load_idx((dir / "img.idx").string(), (dir / "lab3.idx").string()),
                  FormatError);
}

TEST_CASE("synthetic gaussians: determinism, bounds, errors") {
  const Dataset a = synth_gaussian(64, 4, 16, 9);
  const Dataset b = synth_gaussian(64, 4, 16, 9);
  CHECK(a.images.values() == b.images.values());
  CHECK(a.labels == b.labels);
  for (double v : a.images.values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK_THROWS_AS(synth_gaussian(0, 4, 16, 9), DomainError);
  CHECK_THROWS_AS(synth_gaussian(8, 1, 16, 9), DomainError);

  // train and test share class means
  SynthSpec spec;
  spec.n = 32;
  spec.classes = 4;
  spec.dim = 16;
  spec.seed = 11;
  spec.split = "train";
  const Dataset train = synth_gaussian(spec);
  spec.split = "test";
  const Dataset test = synth_gaussian(spec);
  CHECK(train.images.values() != test.images.values());
}

TEST_CASE("widely separated classes are linearly separable") {
  SynthSpec spec;
  spec.n = 512;
  spec.classes = 4;
  spec.dim = 16;
  spec.seed = 5;
  spec.mean_spread = 0.3;
  spec.noise_std = 0.03;  // 10x separation
  const Dataset train = synth_gaussian(spec);
  spec.split = "test";
  spec.n = 256;
  const Dataset test = synth_gaussian(spec);

  TrainConfig cfg;
  cfg.phase = Phase::Pretrain;
  cfg.epochs = 5;
  cfg.lr = 0.5;
  cfg.batch_size = 64;
  cfg.seed = 1;
  const RunResult res = run_pretrain(cfg, "mlp:16-4", train, test);
  CHECK(res.final_accuracy >= 0.99);
}

TEST_CASE("checkpoint round trip is byte-identical") {
  const fs::path dir = test_dir();
  Model model = Model::mlp({6, 5, 3});
  model.init_params(42);

  Checkpoint ck;
  ck.arch = model.arch();
  ck.phase = "pretrain";
  ck.seed = 42;
  ck.config_hash = fnv1a64_hex("probe");
  ck.model = model;
  ck.reg.kind = RegKind::Margin;
  ck.reg.lambda = 0.01;
  ck.reg.margin.emplace("fc1", Tensor::scalar(0.25));
  ck.reg.margin.emplace("fc2", Tensor::scalar(0.5));
  ck.quant.method = "lsq";
  ck.quant.bits = 2;
  ck.quant.step["fc1"] = 0.125;  // exact in f32
  ck.quant.step["fc2"] = 0.25;
  Palette p;
  p.layer_name = "fc1";
  p.bits = 2;
  p.dim = 1;
  p.codebook = {-0.5, -0.125, 0.25, 0.75};
  p.assignments = {0, 1, 2, 3, 1, 0, 2, 3, 3, 2, 0, 1, 2, 2, 1, 0, 3, 0, 1, 2, 3, 1, 0, 2,
                   1, 3, 0, 2, 2, 1};
  ck.palettes.push_back(p);

  const std::string prefix1 = (dir / "ck1").string();
  save_checkpoint(ck, prefix1);
  Checkpoint loaded = load_checkpoint(prefix1);
  CHECK(loaded.arch == ck.arch);
  CHECK(loaded.reg.kind == RegKind::Margin);
  CHECK(loaded.reg.margin.at("fc1")[0] == doctest::Approx(0.25));  // M restored exactly (f32)
  CHECK(loaded.reg.margin.at("fc2")[0] == 0.5);
  CHECK(loaded.quant.method == "lsq");
  CHECK(loaded.quant.step.at("fc1") == 0.125);
  CHECK(loaded.palettes.size() == 1);
  CHECK(loaded.palettes[0].assignments == p.assignments);
  CHECK(loaded.palettes[0].codebook == p.codebook);

  const std::string prefix2 = (dir / "ck2").string();
  save_checkpoint(loaded, prefix2);
  CHECK(slurp(prefix1 + ".blob") == slurp(prefix2 + ".blob"));
  CHECK(slurp(prefix1 + ".json") == slurp(prefix2 + ".json"));
}

TEST_CASE("corrupt manifests are rejected") {
  const fs::path dir = test_dir();
  Model model = Model::mlp({4, 3});
  model.init_params(7);
  Checkpoint ck;
  ck.arch = model.arch();
  ck.model = model;
  const std::string prefix = (dir / "corrupt").string();
  save_checkpoint(ck, prefix);

  nlohmann::json manifest;
  {
    std::ifstream in(prefix + ".json");
    in >> manifest;
  }
  // overlap the second tensor with the first
  manifest["tensors"][1]["offset"] = manifest["tensors"][0]["offset"];
  {
    std::ofstream out(prefix + ".json", std::ios::trunc);
    out << manifest.dump(2);
  }
  CHECK_THROWS_AS(load_checkpoint(prefix), CorruptionError);

  // slot past the end of the blob
  manifest["tensors"][1]["offset"] = 1 << 30;
  {
    std::ofstream out(prefix + ".json", std::ios::trunc);
    out << manifest.dump(2);
  }
  CHECK_THROWS_AS(load_checkpoint(prefix), CorruptionError);
}

TEST_CASE("packed index bitfields round trip") {
  for (int bits : {1, 2, 3, 4, 7}) {
    std::vector<std::uint32_t> idx;
    for (std::uint32_t i = 0; i < 41; ++i) idx.push_back(i % (1u << bits));
    const auto packed = pack_indices(idx, bits);
    CHECK(packed.size() == (idx.size() * std::size_t(bits) + 7) / 8);
    CHECK(unpack_indices(packed, bits, idx.size()) == idx);
  }
  CHECK_THROWS_AS(pack_indices({4}, 2), DomainError);
}

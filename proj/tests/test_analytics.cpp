// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "r2lab/analytics.hpp"
#include "r2lab/rng.hpp"

using namespace r2lab;

TEST_CASE("layer stats basics") {
  const LayerStats s = layer_stats("w", Tensor::from_data({2}, {-1.0, 2.0}));
  CHECK(s.range == doctest::Approx(3.0));
  CHECK(s.mean == doctest::Approx(0.5));
  CHECK_THROWS_AS(layer_stats("w", Tensor::from_data({1}, {0.5})), DomainError);
}

TEST_CASE("kurtosis sampling oracles: uniform 1.8, normal 3.0") {
  Rng rng(71);
  Tensor uniform({1000000});
  for (double& v : uniform.values()) v = rng.uniform(-0.3, 0.3);
  const LayerStats su = layer_stats("u", uniform);
  REQUIRE(su.kurtosis.has_value());
  CHECK(*su.kurtosis == doctest::Approx(1.8).epsilon(0.02 / 1.8));

  Tensor normal({1000000});
  for (double& v : normal.values()) v = rng.normal(0.0, 0.05);
  const LayerStats sn = layer_stats("n", normal);
  REQUIRE(sn.kurtosis.has_value());
  CHECK(*sn.kurtosis == doctest::Approx(3.0).epsilon(0.05 / 3.0));
}

TEST_CASE("affine invariance: range/std scale, kurtosis unchanged") {
  Rng rng(73);
  Tensor w({500});
  for (double& v : w.values()) v = rng.normal(0.0, 0.1);
  const LayerStats base = layer_stats("w", w);
  const double c = -2.5, t = 0.7;
  Tensor scaled = w;
  for (double& v : scaled.values()) v = c * v + t;
  const LayerStats after = layer_stats("w", scaled);
  CHECK(after.range == doctest::Approx(std::fabs(c) * base.range).epsilon(1e-9));
  CHECK(after.std_dev == doctest::Approx(std::fabs(c) * base.std_dev).epsilon(1e-9));
  CHECK(*after.kurtosis == doctest::Approx(*base.kurtosis).epsilon(1e-9));
}

TEST_CASE("histogram: partition, edge cases") {
  const Histogram constant = histogram(Tensor::from_data({5}, {2, 2, 2, 2, 2}), 4);
  std::size_t occupied = 0;
  for (std::size_t c : constant.counts) occupied += c > 0 ? 1 : 0;
  CHECK(occupied == 1);
  CHECK(constant.counts[0] == 5);

  const Histogram h = histogram(Tensor::from_data({4}, {0, 1, 2, 3}), 2);
  CHECK(h.counts == std::vector<std::size_t>{2, 2});

  Rng rng(79);
  Tensor w({777});
  for (double& v : w.values()) v = rng.uniform(-1.0, 1.0);
  const Histogram hr = histogram(w, 33);
  std::size_t total = 0;
  for (std::size_t c : hr.counts) total += c;
  CHECK(total == w.size());
}

TEST_CASE("skew check: symmetric zero, one-sided positive") {
  const SkewInfo sym = skew_check(Tensor::from_data({4}, {-2, -1, 1, 2}));
  CHECK(sym.mean_offset == doctest::Approx(0.0));
  CHECK(sym.asymmetry == doctest::Approx(0.0));

  const SkewInfo pos = skew_check(Tensor::from_data({4}, {0, 0, 0, 10}));
  CHECK(pos.asymmetry > 0.0);
  CHECK(pos.mean_offset > 0.0);
}

TEST_CASE("stats table pairing and swap") {
  Tensor a1 = Tensor::from_data({4}, {-1.0, -0.5, 0.5, 1.0});
  Tensor a2 = Tensor::from_data({3}, {-0.2, 0.0, 0.2});
  Tensor b1 = Tensor::from_data({4}, {-2.0, -1.0, 1.0, 2.0});
  Tensor b2 = Tensor::from_data({3}, {-0.4, 0.1, 0.4});

  const std::vector<NamedTensorView> a = {{"l1", &a1}, {"l2", &a2}};
  const std::vector<NamedTensorView> b = {{"l1", &b1}, {"l2", &b2}};

  // identical checkpoints: ratios exactly one
  const auto same = stats_table(a, a);
  for (const StatsRow& r : same) {
    CHECK(r.range_ratio == 1.0);
    CHECK(r.std_ratio == 1.0);
  }

  const auto ab = stats_table(a, b);
  const auto ba = stats_table(b, a);
  for (std::size_t i = 0; i < ab.size(); ++i) {
    CHECK(ab[i].range_a == ba[i].range_b);
    CHECK(ab[i].range_b == ba[i].range_a);
    CHECK(ab[i].std_a == ba[i].std_b);
    CHECK(ab[i].std_b == ba[i].std_a);
  }

  Tensor wrong = Tensor::from_data({2}, {0.0, 1.0});
  const std::vector<NamedTensorView> bad = {{"l1", &b1}, {"l2", &wrong}};
  CHECK_THROWS_AS(stats_table(a, bad), DimensionError);
}

TEST_CASE("reference row fixture formats to two decimals") {
  // conv1: range 0.63 vs 1.86, std 0.11 vs 0.13 — fixture for the report
  // format only, not a reproduction target
  StatsRow row;
  row.layer = "conv1";
  row.range_a = 0.63;
  row.range_b = 1.86;
  row.range_ratio = row.range_a / row.range_b;
  row.std_a = 0.11;
  row.std_b = 0.13;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%s %.2f %.2f %.2f %.2f", row.layer.c_str(), row.range_a,
                row.range_b, row.std_a, row.std_b);
  CHECK(std::string(buf) == "conv1 0.63 1.86 0.11 0.13");
  CHECK(row.range_ratio < 0.5);
}

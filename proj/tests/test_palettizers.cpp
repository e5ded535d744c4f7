// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "r2lab/finite_diff.hpp"
#include "r2lab/palettizers.hpp"
#include "r2lab/rng.hpp"

using namespace r2lab;

TEST_CASE("group weights: chunking and padding") {
  const Tensor w = Tensor::from_data({4}, {1, 2, 3, 4});
  const Groups g = group_weights(w, 2);
  CHECK(g.count == 2);
  CHECK(g.pad == 0);
  CHECK(g.data == std::vector<double>{1, 2, 3, 4});

  const Tensor odd = Tensor::from_data({3}, {1, 2, 3});
  const Groups g2 = group_weights(odd, 2);
  CHECK(g2.count == 2);
  CHECK(g2.pad == 1);
  CHECK(g2.data == std::vector<double>{1, 2, 3, 0});

  const Groups g3 = group_weights(odd, 1);
  CHECK(g3.count == 3);
  CHECK(g3.pad == 0);
  CHECK(g3.data == std::vector<double>{1, 2, 3});
}

TEST_CASE("kmeans on separated pairs") {
  const Tensor w = Tensor::from_data({4}, {0.0, 0.1, 1.0, 1.1});
  const KmeansResult r = kmeans_fit(group_weights(w, 1), 2, 50, 1e-12, 1);
  std::vector<double> centroids = r.codebook;
  std::sort(centroids.begin(), centroids.end());
  CHECK(centroids[0] == doctest::Approx(0.05));
  CHECK(centroids[1] == doctest::Approx(1.05));

  const KmeansResult single = kmeans_fit(group_weights(w, 1), 1, 10, 1e-12, 1);
  CHECK(single.codebook[0] == doctest::Approx(0.55));

  CHECK_THROWS_AS(kmeans_fit(group_weights(w, 1), 5, 10, 1e-12, 1), DomainError);
}

TEST_CASE("kmeans runs keep SSE non-increasing") {
  Rng rng(51);
  for (int i = 0; i < 20; ++i) {
    Tensor w({80});
    for (double& v : w.values()) v = rng.uniform(-1.0, 1.0);
    // kmeans_fit asserts monotone SSE internally
    const KmeansResult r = kmeans_fit(group_weights(w, 1), 8, 40, 1e-12, rng.next_u64());
    CHECK(r.sse >= 0.0);
  }
}

TEST_CASE("attention rows: symmetry, hard limit, stochasticity") {
  // equidistant centroids give uniform rows
  const Tensor w = Tensor::from_data({1}, {0.5});
  const Groups g = group_weights(w, 1);
  const auto uniform = dkm_attention(g, {0.4, 0.6}, 2, 0.1);
  CHECK(uniform[0] == doctest::Approx(0.5));
  CHECK(uniform[1] == doctest::Approx(0.5));

  // tiny temperature snaps to the nearest centroid
  const auto hard = dkm_attention(g, {0.45, 0.9}, 2, 1e-8);
  CHECK(hard[0] == doctest::Approx(1.0));
  CHECK(hard[1] == doctest::Approx(0.0));

  CHECK_THROWS_AS(dkm_attention(g, {0.4, 0.6}, 2, 0.0), DomainError);

  Rng rng(53);
  Tensor many({33});
  for (double& v : many.values()) v = rng.uniform(-1.0, 1.0);
  const Groups gm = group_weights(many, 1);
  const auto attn = dkm_attention(gm, {-0.7, -0.1, 0.4, 0.8}, 4, 0.2);
  for (std::size_t r = 0; r < gm.count; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < 4; ++j) s += attn[r * 4 + j];
    CHECK(std::fabs(s - 1.0) <= 1e-12);
  }
}

TEST_CASE("soft update: uniform attention, fixed point, degenerate column") {
  // identical centroids -> uniform attention -> every centroid moves to the mean
  const Tensor w = Tensor::from_data({4}, {0.0, 0.2, 0.4, 1.0});
  const Groups g = group_weights(w, 1);
  const DkmIterate uni = dkm_iterate(g, {0.3, 0.3}, 2, 0.5);
  CHECK(uni.codebook[0] == doctest::Approx(0.4));
  CHECK(uni.codebook[1] == doctest::Approx(0.4));

  // groups sitting on k distinct values with tiny tau: codebook unchanged
  const Tensor fixed = Tensor::from_data({6}, {-0.5, -0.5, 0.1, 0.1, 0.8, 0.8});
  const DkmIterate fp = dkm_iterate(group_weights(fixed, 1), {-0.5, 0.1, 0.8}, 3, 1e-7);
  CHECK(std::fabs(fp.codebook[0] - -0.5) < 1e-9);
  CHECK(std::fabs(fp.codebook[1] - 0.1) < 1e-9);
  CHECK(std::fabs(fp.codebook[2] - 0.8) < 1e-9);

  // a centroid no point attends to keeps its previous position
  const DkmIterate deg = dkm_iterate(g, {0.4, 50.0}, 2, 1e-3);
  CHECK(deg.degenerate[1] == 1);
  CHECK(deg.codebook[1] == doctest::Approx(50.0));
}

TEST_CASE("soft forward matches the hard clustering oracle at tiny tau") {
  Rng rng(57);
  Tensor w({12});
  for (std::size_t i = 0; i < 6; ++i) w[i] = -0.8 + rng.uniform(-0.01, 0.01);
  for (std::size_t i = 6; i < 12; ++i) w[i] = 0.7 + rng.uniform(-0.01, 0.01);

  const KmeansResult km = kmeans_fit(group_weights(w, 1), 2, 50, 1e-12, 3);
  const DkmForward fwd = dkm_forward(w, km.codebook, 2, 1, 1e-6);
  // oracle: hard assignment reconstruction from the same codebook
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double d0 = std::fabs(w[i] - km.codebook[0]);
    const double d1 = std::fabs(w[i] - km.codebook[1]);
    // centroid update at one-hot attention equals the cluster mean; compare
    // against the iterated codebook
    const double hard = fwd.codebook[d0 <= d1 ? 0 : 1];
    CHECK(std::fabs(fwd.reconstructed[i] - hard) < 1e-6);
  }

  // k equal to the number of distinct groups reproduces the weights
  const Tensor distinct = Tensor::from_data({4}, {-0.9, -0.2, 0.3, 0.8});
  const DkmForward identity =
      dkm_forward(distinct, {-0.9, -0.2, 0.3, 0.8}, 4, 1, 1e-7);
  for (std::size_t i = 0; i < distinct.size(); ++i) {
    CHECK(identity.reconstructed[i] == doctest::Approx(distinct[i]).epsilon(1e-9));
  }
}

TEST_CASE("soft clustering gradient matches finite differences") {
  Rng rng(59);
  const double tau = 0.2;
  Tensor w({6});
  for (double& v : w.values()) v = rng.uniform(-1.0, 1.0);
  std::vector<double> codebook = {rng.uniform(-1.0, 0.0), rng.uniform(0.0, 1.0)};
  Tensor up({6});
  for (double& v : up.values()) v = rng.uniform(-1.0, 1.0);

  const DkmForward fwd = dkm_forward(w, codebook, 2, 1, tau);
  const Tensor analytic = dkm_backward(w, codebook, fwd, 2, 1, tau, up);
  const Tensor oracle = finite_diff(
      [&](const Tensor& t) {
        const DkmForward r = dkm_forward(t, codebook, 2, 1, tau);
        double acc = 0.0;
        for (std::size_t i = 0; i < r.reconstructed.size(); ++i) {
          acc += up[i] * r.reconstructed[i];
        }
        return acc;
      },
      w);
  CHECK(grad_rel_error(analytic, oracle) < 1e-4);
}

TEST_CASE("reconstruction error non-increasing in bits at fixed dim") {
  Rng rng(61);
  Tensor w({96});
  for (double& v : w.values()) v = rng.uniform(-1.0, 1.0);
  const Groups g = group_weights(w, 1);
  double prev = std::numeric_limits<double>::max();
  for (int bits = 1; bits <= 4; ++bits) {
    const KmeansResult r = kmeans_fit(g, std::size_t(1) << bits, 60, 1e-12, 71);
    CHECK(r.sse <= prev + 1e-9);
    prev = r.sse;
  }
}

TEST_CASE("size accounting") {
  // 2100 x 2000 weight = 4.2e6 params
  Model model = Model::mlp({2100, 2000});
  const std::size_t params = 4200000;

  // no palettes: weights stored at fp bits
  const SizeReport fp = size_report(model, {}, 32);
  CHECK(fp.entries[0].params == params);
  CHECK(fp.entries[0].fp_bytes == params * 4);
  CHECK(fp.entries[0].fp_bytes == 16800000);

  // 1 bit, scalar: 525000 index bytes + 8 codebook bytes
  const SizeReport b1 = size_report(model, {{"fc1", {1, 1}}}, 32);
  CHECK(b1.entries[0].index_bytes == 525000);
  CHECK(b1.entries[0].codebook_bytes == 8);

  // bit-dim identity: (2, 2) and (1, 1) give the same index bytes
  const SizeReport b2d2 = size_report(model, {{"fc1", {2, 2}}}, 32);
  CHECK(b2d2.entries[0].index_bytes == b1.entries[0].index_bytes);

  // independent hand formula over every entry
  for (const auto& rep : {b1, b2d2}) {
    std::size_t total = 0;
    for (const auto& e : rep.entries) {
      if (e.bits > 0) {
        const std::size_t groups = (e.params + e.dim - 1) / e.dim;
        CHECK(e.index_bytes == (groups * std::size_t(e.bits) + 7) / 8);
        CHECK(e.codebook_bytes == (std::size_t(1) << e.bits) * e.dim * 4);
        total += e.index_bytes + e.codebook_bytes;
      } else {
        CHECK(e.fp_bytes == e.params * 4);
        total += e.fp_bytes;
      }
    }
    CHECK(total == rep.total_bytes);
  }

  // compressed size grows with bits at fixed dim
  std::size_t prev_total = 0;
  for (int bits = 1; bits <= 4; ++bits) {
    const SizeReport r = size_report(model, {{"fc1", {bits, 1}}}, 32);
    CHECK(r.total_bytes >= prev_total);
    prev_total = r.total_bytes;
  }

  CHECK_THROWS_AS(size_report(model, {{"nope", {1, 1}}}, 32), ConfigError);
}

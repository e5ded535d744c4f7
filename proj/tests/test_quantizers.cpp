// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "r2lab/quantizers.hpp"
#include "r2lab/rng.hpp"

using namespace r2lab;

namespace {

QuantState make_q(int bits, double step) {
  QuantState q;
  q.bits = bits;
  q.step = step;
  return q;
}

Tensor random_tensor(Rng& rng, std::size_t n, double lo, double hi) {
  Tensor t({n});
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("fake quant examples") {
  const QuantState q = make_q(2, 0.5);
  CHECK(fake_quant_weight(Tensor::from_data({1}, {0.0}), q)[0] == 0.0);
  CHECK(fake_quant_weight(Tensor::from_data({1}, {0.6}), q)[0] == doctest::Approx(0.5));
  // clamp(-4, -2, 1) = -2 -> -1.0
  CHECK(fake_quant_weight(Tensor::from_data({1}, {-2.0}), q)[0] == doctest::Approx(-1.0));
  CHECK_THROWS_AS(fake_quant_weight(Tensor::from_data({1}, {0.1}), make_q(2, 0.0)), DomainError);
}

TEST_CASE("fake quant grid membership, error bound, idempotence") {
  Rng rng(41);
  for (int trial = 0; trial < 30; ++trial) {
    const int bits = 2 + static_cast<int>(rng.index(7));
    const QuantState q = make_q(bits, rng.uniform(0.01, 0.3));
    const Tensor w = random_tensor(rng, 40, -2.0, 2.0);
    const Tensor w_hat = fake_quant_weight(w, q);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double level = w_hat[i] / q.step;
      CHECK(std::fabs(level - std::round(level)) < 1e-9);
      CHECK(level >= -double(q.qn()) - 1e-9);
      CHECK(level <= double(q.qp()) + 1e-9);
      const double u = w[i] / q.step;
      if (u >= -double(q.qn()) && u <= double(q.qp())) {
        CHECK(std::fabs(w[i] - w_hat[i]) <= q.step / 2 + 1e-12);
      }
    }
    const Tensor twice = fake_quant_weight(w_hat, q);
    CHECK(twice.values() == w_hat.values());  // bit-exact
  }
}

TEST_CASE("clipped straight-through estimator") {
  const QuantState q = make_q(2, 0.5);  // range [-2, 1] levels -> w in [-1.0, 0.5]
  const Tensor w = Tensor::from_data({4}, {0.3, -0.9, 5.0, -3.0});
  const Tensor up = Tensor::from_data({4}, {1.0, 2.0, 3.0, 4.0});
  const Tensor dw = ste_backward(up, w, q);
  CHECK(dw[0] == 1.0);  // in range, gradient passes
  CHECK(dw[1] == 2.0);
  CHECK(dw[2] == 0.0);  // far outside, clipped
  CHECK(dw[3] == 0.0);
}

TEST_CASE("lsq step gradient branches") {
  const QuantState q = make_q(2, 0.5);
  {
    // exactly on a grid point: zero in-range contribution
    const Tensor w = Tensor::from_data({1}, {0.5});
    const auto g = lsq_grads(Tensor::ones({1}), w, q, 1);
    CHECK(g.ds == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(g.dw[0] == 1.0);
  }
  {
    // saturated above: dw_hat/ds = Q_P
    const Tensor w = Tensor::from_data({1}, {3.0});
    const auto g = lsq_grads(Tensor::ones({1}), w, q, 1);
    CHECK(g.ds == doctest::Approx(double(q.qp()) / std::sqrt(1.0 * q.qp())));
    CHECK(g.dw[0] == 0.0);
  }
  {
    // b = 1 uses Q_P := 1 in the gradient scale
    const QuantState q1 = make_q(1, 0.5);
    const Tensor w = Tensor::from_data({1}, {-9.0});
    const auto g = lsq_grads(Tensor::ones({1}), w, q1, 4);
    CHECK(g.ds == doctest::Approx(-1.0 / std::sqrt(4.0)));
  }
}

TEST_CASE("pact clip examples") {
  const Tensor x = Tensor::from_data({3}, {-1.0, 0.5, 2.0});
  const Tensor y = pact_clip(x, 1.0);
  CHECK(y.values() == std::vector<double>{0.0, 0.5, 1.0});
  CHECK_THROWS_AS(pact_clip(x, 0.0), DomainError);

  // nothing saturates: clip gradient is zero
  const Tensor low = Tensor::from_data({3}, {0.1, 0.2, 0.3});
  const auto g = pact_clip_grads(Tensor::ones({3}), low, 1.0);
  CHECK(g.dclip == 0.0);
  CHECK(g.dx.values() == std::vector<double>{1.0, 1.0, 1.0});
}

TEST_CASE("ewgs scaling") {
  Rng rng(43);
  const Tensor w = random_tensor(rng, 10, -1.0, 1.0);
  const QuantState q = make_q(4, 0.1);
  const Tensor w_hat = fake_quant_weight(w, q);
  const Tensor up = random_tensor(rng, 10, -2.0, 2.0);

  // delta = 0 is the identity on gradients
  CHECK(ewgs_scale(up, w, w_hat, 0.0).values() == up.values());

  const Tensor one = Tensor::from_data({1}, {1.0});
  const Tensor pos = Tensor::from_data({1}, {0.1});
  const Tensor zero = Tensor::from_data({1}, {0.0});
  CHECK(ewgs_scale(one, pos, zero, 0.2)[0] == doctest::Approx(1.02));

  // sign preserved while delta |w - w_hat| < 1
  const Tensor scaled = ewgs_scale(up, w, w_hat, 0.2);
  for (std::size_t i = 0; i < up.size(); ++i) {
    if (up[i] != 0.0) CHECK(std::signbit(scaled[i]) == std::signbit(up[i]));
  }
}

TEST_CASE("statistical step init") {
  // mean|w| = 0.05 at 2 bits (Q_P = 1) -> 0.1
  const Tensor w2 = Tensor::from_data({2}, {0.05, -0.05});
  CHECK(init_step_statistical(w2, 2) == doctest::Approx(0.1));

  bool warned = false;
  CHECK(init_step_statistical(Tensor({8}), 4, &warned) == doctest::Approx(1e-8));
  CHECK(warned);

  const Tensor w4 = Tensor::from_data({2}, {0.07, -0.07});
  CHECK(init_step_statistical(w4, 4) == doctest::Approx(0.14 / std::sqrt(7.0)));
}

TEST_CASE("range-based 3-bin quantizer drowns inliers in the zero bin") {
  // 99 inliers in [-0.1, 0.1] plus the outliers -1 and 1
  Rng rng(47);
  Tensor w({101});
  for (std::size_t i = 0; i < 99; ++i) w[i] = rng.uniform(-0.1, 0.1);
  w[99] = -1.0;
  w[100] = 1.0;

  double mn = w[0], mx = w[0];
  for (double v : w.values()) {
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  const double width = (mx - mn) / 3.0;
  std::size_t zero_bin = 0;
  for (double v : w.values()) {
    if (v >= mn + width && v < mn + 2 * width) ++zero_bin;
  }
  CHECK(zero_bin >= 99);  // everything except the two outliers
}

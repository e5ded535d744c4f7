// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "r2lab/finite_diff.hpp"
#include "r2lab/rng.hpp"
#include "r2lab/tape.hpp"
#include "r2lab/tensor.hpp"

using namespace r2lab;

namespace {

Tensor random_tensor(Rng& rng, const Shape& shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("tensor basics and invariants") {
  Tensor t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.size() == 6);
  CHECK(t.at(1, 2) == 6.0);
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), DimensionError);
  Tensor bad = Tensor::from_data({2}, {1.0, std::nan("")});
  CHECK_THROWS_AS(bad.check_finite("test"), NumericError);
  CHECK_THROWS_AS(t.scalar_value(), DimensionError);
}

TEST_CASE("matmul identity and hand arithmetic") {
  Tape tape;
  Value eye = tape.input(Tensor::from_data({2, 2}, {1, 0, 0, 1}));
  Value m = tape.input(Tensor::from_data({2, 2}, {1, 2, 3, 4}));
  const Tensor& prod = tape.value(tape.matmul(eye, m));
  CHECK(prod.values() == std::vector<double>{1, 2, 3, 4});

  Value row = tape.input(Tensor::from_data({1, 2}, {1, 2}));
  Value col = tape.input(Tensor::from_data({2, 1}, {3, 4}));
  CHECK(tape.value(tape.matmul(row, col)).scalar_value() == doctest::Approx(11.0));

  CHECK_THROWS_AS(tape.matmul(row, row), DimensionError);
}

TEST_CASE("conv2d ones and impulse response") {
  {
    Tape tape;
    Value x = tape.input(Tensor::ones({1, 1, 3, 3}));
    Value w = tape.input(Tensor::ones({1, 1, 3, 3}));
    const Tensor& y = tape.value(tape.conv2d(x, w, 1, 0));
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y[0] == doctest::Approx(9.0));
  }
  {
    // delta input with pad kh-1 reproduces a flipped copy of the kernel
    Rng rng(3);
    Tensor x({1, 1, 4, 4});
    const std::size_t i0 = 1, j0 = 2;
    x[i0 * 4 + j0] = 1.0;
    Tensor w = random_tensor(rng, {1, 1, 3, 3});
    Tape tape;
    const Tensor& y = tape.value(tape.conv2d(tape.input(x), tape.input(w), 1, 2));
    const std::size_t out = 4 + 2 * 2 - 3 + 1;
    REQUIRE(y.shape() == Shape{1, 1, out, out});
    for (std::size_t oh = 0; oh < out; ++oh) {
      for (std::size_t ow = 0; ow < out; ++ow) {
        const long r = static_cast<long>(i0) - static_cast<long>(oh) + 2;
        const long s = static_cast<long>(j0) - static_cast<long>(ow) + 2;
        const double expect =
            (r >= 0 && r < 3 && s >= 0 && s < 3) ? w[static_cast<std::size_t>(r * 3 + s)] : 0.0;
        CHECK(y[oh * out + ow] == doctest::Approx(expect));
      }
    }
  }
  {
    Tape tape;
    Value x = tape.input(Tensor::ones({1, 1, 2, 2}));
    Value w = tape.input(Tensor::ones({1, 1, 5, 5}));
    CHECK_THROWS_AS(tape.conv2d(x, w, 1, 0), DimensionError);
  }
}

TEST_CASE("relu and softmax cross entropy") {
  Tape tape;
  const Tensor& y = tape.value(tape.relu(tape.input(Tensor::from_data({3}, {-1, 0, 2}))));
  CHECK(y.values() == std::vector<double>{0, 0, 2});

  // uniform logits give ln C for any label
  const std::size_t classes = 7;
  Value logits = tape.input(Tensor({2, classes}, 0.42));
  const double loss = tape.value(tape.softmax_ce(logits, {3, 6})).scalar_value();
  CHECK(loss == doctest::Approx(std::log(double(classes))).epsilon(1e-12));

  Value logits2 = tape.input(Tensor({1, 3}));
  CHECK_THROWS_AS(tape.softmax_ce(logits2, {3}), IndexError);
  CHECK_THROWS_AS(tape.softmax_ce(logits2, {-1}), IndexError);
}

TEST_CASE("backward populates gradients and accumulates") {
  Tensor w = Tensor::from_data({4}, {1, -2, 3, 0.5});
  {
    Tape tape;
    Value v = tape.param(w);
    Value loss = tape.sum(v);
    w.zero_grad();
    tape.backward(loss);
    CHECK(w.grad() == std::vector<double>{1, 1, 1, 1});
    tape.backward(loss);  // repeated call without zeroing accumulates
    CHECK(w.grad() == std::vector<double>{2, 2, 2, 2});
  }
  {
    Tape tape;
    Value v = tape.param(w);
    Value loss = tape.scale(tape.sum(tape.mul(v, v)), 0.0);
    w.zero_grad();
    tape.backward(loss);
    for (double g : w.grad()) CHECK(g == 0.0);
  }
  {
    Tape tape;
    Value v = tape.param(w);
    CHECK_THROWS_AS(tape.backward(v), DimensionError);  // loss must be scalar
  }
}

TEST_CASE("finite_diff trivial oracles") {
  const Tensor x = Tensor::from_data({2}, {1, 2});
  const Tensor g = finite_diff(
      [](const Tensor& t) {
        double acc = 0.0;
        for (double v : t.values()) acc += v * v;
        return acc;
      },
      x);
  CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(g[1] == doctest::Approx(4.0).epsilon(1e-8));

  // max|w| at a unique max is one-hot
  const Tensor w = Tensor::from_data({3}, {0.2, -0.9, 0.4});
  const Tensor gm = finite_diff(
      [](const Tensor& t) {
        double mx = 0.0;
        for (double v : t.values()) mx = std::max(mx, std::fabs(v));
        return mx;
      },
      w);
  CHECK(gm[0] == doctest::Approx(0.0));
  CHECK(gm[1] == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(gm[2] == doctest::Approx(0.0));

  CHECK_THROWS_AS(
      finite_diff([](const Tensor&) { return std::numeric_limits<double>::infinity(); }, x),
      NumericError);
}

TEST_CASE("matmul adjoints match the finite-difference oracle") {
  Rng rng(11);
  Tensor a = random_tensor(rng, {5, 4});
  Tensor b = random_tensor(rng, {4, 3});
  Tape tape;
  Value loss = tape.sum(tape.matmul(tape.param(a), tape.param(b)));
  a.zero_grad();
  b.zero_grad();
  tape.backward(loss);

  auto f_a = [&](const Tensor& t) {
    Tape t2;
    return t2.value(t2.sum(t2.matmul(t2.input(t), t2.input(b)))).scalar_value();
  };
  const Tensor oracle = finite_diff(f_a, a);
  CHECK(grad_rel_error(Tensor::from_data(a.shape(), a.grad()), oracle) < 1e-6);
}

TEST_CASE("backward is linear in the loss") {
  Rng rng(13);
  Tensor w = random_tensor(rng, {6});
  const double a = 1.7, b = -0.3;

  auto grads_of = [&](bool combined) {
    std::vector<double> out;
    Tape tape;
    Value v = tape.param(w);
    Value f = tape.sum(tape.mul(v, v));
    Value g = tape.sum(v);
    w.zero_grad();
    if (combined) {
      tape.backward(tape.add(tape.scale(f, a), tape.scale(g, b)));
      out = w.grad();
    } else {
      tape.backward(f);
      std::vector<double> gf = w.grad();
      w.zero_grad();
      Tape t2;
      Value v2 = t2.param(w);
      t2.backward(t2.sum(v2));
      for (std::size_t i = 0; i < gf.size(); ++i) out.push_back(a * gf[i] + b * w.grad()[i]);
    }
    return out;
  };
  const auto combined = grads_of(true);
  const auto separate = grads_of(false);
  for (std::size_t i = 0; i < combined.size(); ++i) {
    CHECK(std::fabs(combined[i] - separate[i]) < 1e-12);
  }
}

TEST_CASE("tape replay is deterministic") {
  auto run = [] {
    Rng rng(99);
    Tensor a = random_tensor(rng, {4, 4});
    Tensor b = random_tensor(rng, {4, 2});
    Tape tape;
    Value loss = tape.sum(tape.relu(tape.matmul(tape.param(a), tape.param(b))));
    a.zero_grad();
    b.zero_grad();
    tape.backward(loss);
    std::vector<double> out = {tape.value(loss).scalar_value()};
    out.insert(out.end(), a.grad().begin(), a.grad().end());
    out.insert(out.end(), b.grad().begin(), b.grad().end());
    return out;
  };
  CHECK(run() == run());
}

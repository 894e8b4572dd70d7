#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "psal/error.hpp"
#include "psal/ops.hpp"

using namespace psal;
using psal::test::max_grad_rel_error;
using psal::test::random_tensor;

namespace {

// Random linear functional of an op output, so every output entry carries an
// O(1) gradient.
Tensor weighted_sum(const Tensor& out, const Tensor& weights) { return sum(mul(out, weights)); }

}  // namespace

TEST_CASE("conv2d basic values") {
  Tensor ones({1, 1, 3, 3}, 1.0);
  Tensor k({1, 1, 3, 3}, 1.0);
  auto out = conv2d(ones, k, Tensor({1}, 0.0), 1, 0);
  CHECK(out.shape() == Shape{1, 1, 1, 1});
  CHECK(out.item() == 9.0);

  Rng rng(3);
  auto x = random_tensor({2, 1, 5, 5}, rng);
  auto id = conv2d(x, Tensor({1, 1, 1, 1}, 1.0), Tensor({1}, 0.0), 1, 0);
  CHECK(id.values() == x.values());
}

TEST_CASE("conv2d output geometry and errors") {
  Tensor x({1, 2, 8, 8});
  auto out = conv2d(x, Tensor({3, 2, 4, 4}), Tensor({3}), 2, 1);
  CHECK(out.shape() == Shape{1, 3, 4, 4});
  CHECK_THROWS_AS(conv2d(x, Tensor({3, 5, 3, 3}), Tensor({3}), 1, 0), DimensionError);
  CHECK_THROWS_AS(conv2d(x, Tensor({3, 2, 11, 11}), Tensor({3}), 1, 0), DimensionError);
}

TEST_CASE("conv2d gradient matches finite differences") {
  Rng rng(11);
  auto x = random_tensor({2, 3, 8, 8}, rng);
  auto k = random_tensor({4, 3, 3, 3}, rng);
  auto b = random_tensor({4}, rng);
  for (std::size_t stride : {1, 2}) {
    auto w = random_tensor({2, 4, stride == 1 ? 8u : 4u, stride == 1 ? 8u : 4u}, rng);
    auto err = max_grad_rel_error([&] { return weighted_sum(conv2d(x, k, b, stride, 1), w); }, {x, k, b});
    CHECK(err < 1e-4);
  }
}

TEST_CASE("deconv2d hand expansion and geometry") {
  Tensor x({1, 1, 1, 1}, 2.0);
  auto out = deconv2d(x, Tensor({1, 1, 2, 2}, 1.0), Tensor({1}, 0.0), 2, 0);
  CHECK(out.shape() == Shape{1, 1, 2, 2});
  for (double v : out.values()) CHECK(v == 2.0);

  auto up = deconv2d(Tensor({1, 3, 4, 4}), Tensor({3, 2, 4, 4}), Tensor({2}), 2, 1);
  CHECK(up.shape() == Shape{1, 2, 8, 8});
  CHECK_THROWS_AS(deconv2d(Tensor({1, 1, 1, 1}), Tensor({1, 1, 2, 2}), Tensor({1}), 1, 1), DimensionError);
  CHECK_THROWS_AS(deconv2d(Tensor({1, 2, 2, 2}), Tensor({3, 1, 2, 2}), Tensor({1}), 1, 0), DimensionError);
}

TEST_CASE("deconv2d is the adjoint of conv2d") {
  Rng rng(5);
  struct Geo {
    std::size_t c, f, h, k, stride, pad;
  };
  for (Geo g : {Geo{3, 4, 8, 4, 2, 1}, Geo{2, 5, 7, 3, 1, 1}, Geo{1, 2, 9, 3, 2, 0}, Geo{4, 3, 6, 2, 2, 0}}) {
    for (int trial = 0; trial < 5; ++trial) {
      auto u = random_tensor({2, g.c, g.h, g.h}, rng);
      auto k = random_tensor({g.f, g.c, g.k, g.k}, rng);
      Tensor zero_f({g.f}), zero_c({g.c});
      auto cu = conv2d(u, k, zero_f, g.stride, g.pad);
      auto v = random_tensor(cu.shape(), rng);
      auto dv = deconv2d(v, k, zero_c, g.stride, g.pad);
      if (dv.shape() != u.shape()) continue;  // geometry that does not invert exactly
      CHECK(std::fabs(dot(cu, v) - dot(u, dv)) < 1e-9);
    }
  }
}

TEST_CASE("deconv2d gradient matches finite differences") {
  Rng rng(12);
  auto x = random_tensor({2, 3, 4, 4}, rng);
  auto k = random_tensor({3, 2, 4, 4}, rng);
  auto b = random_tensor({2}, rng);
  auto w = random_tensor({2, 2, 8, 8}, rng);
  auto err = max_grad_rel_error([&] { return weighted_sum(deconv2d(x, k, b, 2, 1), w); }, {x, k, b});
  CHECK(err < 1e-4);
}

TEST_CASE("maxpool2d") {
  Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(maxpool2d(x, 2).item() == 4.0);

  auto c = maxpool2d(Tensor({1, 2, 4, 4}, 0.7), 2);
  for (double v : c.values()) CHECK(v == 0.7);
  CHECK_THROWS_AS(maxpool2d(Tensor({1, 1, 5, 4}), 2), DimensionError);

  // Gradient of sum goes to the argmax of each window; first index on ties.
  Tensor t({1, 1, 2, 4}, {1, 5, 2, 2, 3, 0, 2, 2});
  t.set_requires_grad(true);
  backward(sum(maxpool2d(t, 2)));
  const std::vector<double> expected{0, 1, 1, 0, 0, 0, 0, 0};
  CHECK(std::vector<double>(t.grad().begin(), t.grad().end()) == expected);

  Rng rng(13);
  auto r = random_tensor({2, 3, 6, 6}, rng);
  auto w = random_tensor({2, 3, 3, 3}, rng);
  CHECK(max_grad_rel_error([&] { return weighted_sum(maxpool2d(r, 2), w); }, {r}) < 1e-4);
}

TEST_CASE("batchnorm2d train statistics") {
  Rng rng(21);
  auto x = random_tensor({3, 2, 4, 4}, rng, -3.0, 5.0);
  BatchNormState st{Tensor({2}, 0.0), Tensor({2}, 1.0)};
  auto y = batchnorm2d(x, Tensor({2}, 1.0), Tensor({2}, 0.0), Mode::Train, &st);
  for (std::size_t ch = 0; ch < 2; ++ch) {
    double s = 0.0, s2 = 0.0;
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
          s += y.at(n, ch, i, j);
          s2 += y.at(n, ch, i, j) * y.at(n, ch, i, j);
        }
    const double mean = s / 48.0;
    CHECK(std::fabs(mean) < 1e-6);
    CHECK(std::fabs(s2 / 48.0 - mean * mean - 1.0) < 1e-4);  // eps=1e-5 shrinks the variance slightly
  }
  // Running stats moved by (1 - momentum) toward the batch statistics.
  CHECK(st.running_mean.data()[0] != 0.0);

  auto constant = batchnorm2d(Tensor({2, 1, 3, 3}, 4.2), Tensor({1}, 1.0), Tensor({1}, 5.0), Mode::Train, nullptr);
  for (double v : constant.values()) CHECK(std::fabs(v - 5.0) < 1e-3);

  CHECK_THROWS_AS(batchnorm2d(Tensor({1, 1, 1, 1}), Tensor({1}, 1.0), Tensor({1}), Mode::Train, nullptr), UsageError);
}

TEST_CASE("batchnorm2d running statistics update") {
  BatchNormState st{Tensor({1}, 0.0), Tensor({1}, 1.0)};
  Tensor x({2, 1, 1, 1}, {1.0, 3.0});  // mean 2, biased var 1, unbiased var 2
  const auto y = batchnorm2d(x, Tensor({1}, 1.0), Tensor({1}, 0.0), Mode::Train, &st);
  CHECK(y.values()[0] == doctest::Approx(-1.0 / std::sqrt(1.0 + 1e-5)).epsilon(1e-12));
  CHECK(st.running_mean.item() == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(st.running_var.item() == doctest::Approx(0.9 + 0.1 * 2.0).epsilon(1e-12));
  auto e = batchnorm2d(Tensor({1, 1, 1, 1}, 0.2), Tensor({1}, 2.0), Tensor({1}, 0.5), Mode::Eval, &st);
  CHECK(e.item() == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("batchnorm2d gradient matches finite differences") {
  Rng rng(22);
  auto x = random_tensor({2, 3, 3, 3}, rng);
  auto gamma = random_tensor({3}, rng, 0.5, 1.5);
  auto beta = random_tensor({3}, rng);
  auto w = random_tensor({2, 3, 3, 3}, rng);
  CHECK(max_grad_rel_error([&] { return weighted_sum(batchnorm2d(x, gamma, beta, Mode::Train, nullptr), w); },
                           {x, gamma, beta}) < 1e-4);
  BatchNormState st{random_tensor({3}, rng), random_tensor({3}, rng, 0.5, 2.0)};
  CHECK(max_grad_rel_error([&] { return weighted_sum(batchnorm2d(x, gamma, beta, Mode::Eval, &st), w); },
                           {x, gamma, beta}) < 1e-4);
}

TEST_CASE("dropout") {
  Rng rng(31);
  auto x = random_tensor({1, 2, 3, 3}, rng);
  CHECK(dropout(x, 0.5, Mode::Eval, rng).values() == x.values());
  CHECK(dropout(x, 0.0, Mode::Train, rng).values() == x.values());
  CHECK_THROWS_AS(dropout(x, 1.0, Mode::Train, rng), ParameterError);
  CHECK_THROWS_AS(dropout(x, -0.1, Mode::Train, rng), ParameterError);

  Tensor big({1000000}, 1.0);
  Rng seeded(2024);
  auto y = dropout(big, 0.2, Mode::Train, seeded);
  std::size_t zeros = 0;
  double total = 0.0;
  for (double v : y.values()) {
    zeros += v == 0.0;
    total += v;
  }
  const double frac = static_cast<double>(zeros) / 1e6;
  CHECK(frac >= 0.198);
  CHECK(frac <= 0.202);
  CHECK(total / 1e6 >= 0.99);
  CHECK(total / 1e6 <= 1.01);

  Rng a(9), b(9);
  CHECK(dropout(x, 0.3, Mode::Train, a).values() == dropout(x, 0.3, Mode::Train, b).values());
}

TEST_CASE("activations") {
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  CHECK(psal::tanh(Tensor::scalar(0.0)).item() == 0.0);
  CHECK(relu(Tensor::scalar(-3.0)).item() == 0.0);
  auto s = sigmoid(Tensor({3}, {-800.0, 0.0, 800.0}));
  for (double v : s.values()) CHECK(std::isfinite(v));

  Rng rng(41);
  for (auto kind : {Activation::Relu, Activation::Tanh, Activation::Sigmoid}) {
    auto x = random_tensor({100}, rng, -3.0, 3.0);
    auto w = random_tensor({100}, rng);
    CHECK(max_grad_rel_error([&] { return weighted_sum(activation(x, kind), w); }, {x}, 1e-5, 1e-4) < 1e-6);
  }
}

TEST_CASE("concat_channels") {
  Rng rng(51);
  auto a = random_tensor({1, 3, 4, 4}, rng);
  auto b = random_tensor({1, 2, 4, 4}, rng);
  auto c = concat_channels(a, b);
  CHECK(c.shape() == Shape{1, 5, 4, 4});
  CHECK(slice_channels(c, 0, 3).values() == a.values());
  CHECK(slice_channels(c, 3, 5).values() == b.values());
  CHECK_THROWS_AS(concat_channels(a, Tensor({1, 2, 4, 5})), DimensionError);

  a.set_requires_grad(true);
  b.set_requires_grad(true);
  backward(sum(concat_channels(a, b)));
  for (double g : a.grad()) CHECK(g == 1.0);
  for (double g : b.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward basics") {
  Tensor x = Tensor::scalar(3.0);
  x.set_requires_grad(true);
  backward(mul(x, x));
  CHECK(x.grad()[0] == 6.0);

  // Accumulates across calls until zeroed.
  backward(mul(x, x));
  CHECK(x.grad()[0] == 12.0);
  x.zero_grad();
  backward(mul(x, x));
  CHECK(x.grad()[0] == 6.0);

  Tensor v({5}, 0.0);
  v.set_requires_grad(true);
  backward(sum(psal::tanh(v)));
  for (double g : v.grad()) CHECK(g == 1.0);

  CHECK_THROWS_AS(backward(v), UsageError);
}

TEST_CASE("graph reuse accumulates additively") {
  Rng rng(61);
  auto x = random_tensor({4}, rng);
  x.set_requires_grad(true);
  auto y = psal::tanh(x);
  auto loss = add(sum(y), sum(mul(y, y)));
  backward(loss);
  for (std::size_t i = 0; i < 4; ++i) {
    const double t = std::tanh(x.data()[i]);
    CHECK(x.grad()[i] == doctest::Approx((1 + 2 * t) * (1 - t * t)).epsilon(1e-12));
  }
}

TEST_CASE("loss helper ops gradients") {
  Rng rng(71);
  auto a = random_tensor({2, 1, 3, 3}, rng, 0.1, 0.9);
  auto b = random_tensor({2, 1, 3, 3}, rng, -1.0, 1.0);
  auto f = [&] {
    return add(mean(abs(sub(a, b))), sum(log(clamp(mean_per_sample(a), 1e-7, 1 - 1e-7))));
  };
  CHECK(max_grad_rel_error(f, {a, b}) < 1e-4);
}

TEST_CASE("no grad guard skips graph recording") {
  Tensor x = Tensor::scalar(2.0);
  x.set_requires_grad(true);
  {
    NoGradGuard guard;
    CHECK_FALSE(mul(x, x).requires_grad());
  }
  CHECK(mul(x, x).requires_grad());
}

TEST_CASE("finite inputs give finite outputs") {
  Rng rng(81);
  auto x = random_tensor({2, 2, 4, 4}, rng, -50.0, 50.0);
  auto y = batchnorm2d(x, Tensor({2}, 1.0), Tensor({2}), Mode::Train, nullptr);
  y = maxpool2d(psal::tanh(conv2d(y, random_tensor({3, 2, 3, 3}, rng), Tensor({3}), 1, 1)), 2);
  y = sigmoid(deconv2d(y, random_tensor({3, 1, 4, 4}, rng), Tensor({1}), 2, 1));
  for (double v : y.values()) CHECK(std::isfinite(v));
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "entlab/tensor.hpp"

using namespace entlab;

TEST_CASE("matmul identity and hand-computed product") {
  Tensor<double> eye = Tensor<double>::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor<double> m = Tensor<double>::from_data({3, 2}, {1, 2, 3, 4, 5, 6});
  auto r = matmul(eye, m);
  for (std::size_t i = 0; i < 6; ++i) CHECK(r.data()[i] == doctest::Approx(m.data()[i]));

  Tensor<double> a = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4});
  Tensor<double> b = Tensor<double>::from_data({2, 1}, {1, 1});
  auto c = matmul(a, b);
  CHECK(c.data()[0] == doctest::Approx(3));
  CHECK(c.data()[1] == doctest::Approx(7));
}

TEST_CASE("matmul shape mismatch throws") {
  Tensor<double> a = Tensor<double>::zeros({2, 3});
  Tensor<double> b = Tensor<double>::zeros({2, 3});
  CHECK_THROWS_AS(matmul(a, b), std::invalid_argument);
}

TEST_CASE("matmul gradient vs finite differences") {
  Rng rng(42);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> a(5 * 7), b(7 * 3);
    for (auto& v : a) v = rng.normal(0.0, 1.0);
    for (auto& v : b) v = rng.normal(0.0, 1.0);
    Tensor<double> bt = Tensor<double>::from_data({7, 3}, b);
    const double err = finite_difference_check(
        [&](const Tensor<double>& x) { return sum(matmul(x, bt)); }, {5, 7}, a, 1e-5);
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("layer_norm constant row maps to bias") {
  Tensor<double> x = Tensor<double>::from_data({1, 3}, {4.2, 4.2, 4.2});
  Tensor<double> gain = Tensor<double>::full({3}, 1.0);
  Tensor<double> bias = Tensor<double>::from_data({3}, {0.5, -0.25, 1.0});
  auto y = layer_norm(x, gain, bias);
  CHECK(y.data()[0] == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(y.data()[1] == doctest::Approx(-0.25).epsilon(1e-9));
  CHECK(y.data()[2] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("layer_norm normalizes [1,-1]") {
  Tensor<double> x = Tensor<double>::from_data({1, 2}, {1.0, -1.0});
  Tensor<double> gain = Tensor<double>::full({2}, 1.0);
  Tensor<double> bias = Tensor<double>::zeros({2});
  auto y = layer_norm(x, gain, bias);
  CHECK(std::abs(y.data()[0] - 1.0) < 1e-4);
  CHECK(std::abs(y.data()[1] + 1.0) < 1e-4);
}

TEST_CASE("layer_norm gradient vs finite differences") {
  Rng rng(7);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> x(4 * 6), g(6), b(6);
    for (auto& v : x) v = rng.normal(0.0, 1.0);
    for (auto& v : g) v = rng.normal(1.0, 0.3);
    for (auto& v : b) v = rng.normal(0.0, 0.3);
    Tensor<double> gt = Tensor<double>::from_data({6}, g);
    Tensor<double> bt = Tensor<double>::from_data({6}, b);
    const double err = finite_difference_check(
        [&](const Tensor<double>& t2) { return sum(mul(layer_norm(t2, gt, bt), t2)); },
        {4, 6}, x, 1e-5);
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("ffn zero input with zero biases is zero") {
  Tensor<double> x = Tensor<double>::zeros({2, 4});
  Tensor<double> w1 = Tensor<double>::full({4, 8}, 0.3);
  Tensor<double> b1 = Tensor<double>::zeros({8});
  Tensor<double> w2 = Tensor<double>::full({8, 4}, -0.2);
  Tensor<double> b2 = Tensor<double>::zeros({4});
  auto y = ffn_forward(x, w1, b1, w2, b2);
  for (auto v : y.data()) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("ffn 1x1 unit weights follow the GELU path") {
  Tensor<double> x = Tensor<double>::from_data({1, 1}, {1.0});
  Tensor<double> w = Tensor<double>::full({1, 1}, 1.0);
  Tensor<double> b = Tensor<double>::zeros({1});
  auto y = ffn_forward(x, w, b, w, b);
  CHECK(y.data()[0] == doctest::Approx(0.8413).epsilon(1e-3));
}

TEST_CASE("ffn gradient vs finite differences") {
  Rng rng(11);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> x(3 * 5);
    for (auto& v : x) v = rng.normal(0.0, 1.0);
    Tensor<double> w1 = Tensor<double>::randn({5, 9}, rng, 0.5);
    Tensor<double> b1 = Tensor<double>::randn({9}, rng, 0.2);
    Tensor<double> w2 = Tensor<double>::randn({9, 5}, rng, 0.5);
    Tensor<double> b2 = Tensor<double>::randn({5}, rng, 0.2);
    const double err = finite_difference_check(
        [&](const Tensor<double>& t2) { return sum(ffn_forward(t2, w1, b1, w2, b2)); },
        {3, 5}, x, 1e-5);
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("cross_entropy uniform logits give log V") {
  Tensor<double> logits = Tensor<double>::full({2, 8}, 0.37);
  auto loss = cross_entropy(logits, {3, 5}, {1, 1});
  CHECK(loss.item() == doctest::Approx(std::log(8.0)).epsilon(1e-10));
}

TEST_CASE("cross_entropy loss vanishes as the margin grows") {
  std::vector<double> l10(4, 0.0), l30(4, 0.0);
  l10[2] = 10.0;
  l30[2] = 30.0;
  auto a = cross_entropy(Tensor<double>::from_data({1, 4}, l10), {2}, {1});
  auto b = cross_entropy(Tensor<double>::from_data({1, 4}, l30), {2}, {1});
  CHECK(b.item() < a.item());
  CHECK(b.item() < 1e-9);
}

TEST_CASE("cross_entropy matches the direct log-sum-exp value") {
  Tensor<double> logits = Tensor<double>::from_data({1, 3}, {1.0, 2.0, 3.0});
  auto loss = cross_entropy(logits, {2}, {1});
  CHECK(loss.item() == doctest::Approx(0.40760596).epsilon(1e-7));
}

TEST_CASE("cross_entropy rejects an all-masked batch") {
  Tensor<double> logits = Tensor<double>::zeros({2, 4});
  CHECK_THROWS_AS(cross_entropy(logits, {0, 0}, {0, 0}), std::invalid_argument);
}

TEST_CASE("gradient accumulation is additive across backward passes") {
  Tensor<double> x = Tensor<double>::from_data({2}, {1.5, -2.0}, true);
  auto y = sum(mul(x, x));
  y.backward();
  const double g0 = x.grad()[0];
  CHECK(g0 == doctest::Approx(3.0));
  y.backward();
  CHECK(x.grad()[0] == doctest::Approx(2.0 * g0));
  x.zero_grad();
  y.backward();
  CHECK(x.grad()[0] == doctest::Approx(g0));
}

TEST_CASE("finite_difference_check validates inputs") {
  CHECK_THROWS_AS(finite_difference_check(
                      [](const Tensor<double>& x) { return sum(x); }, {2}, {1.0, 2.0}, 1e-2),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      finite_difference_check(
          [](const Tensor<double>& x) {
            auto y = sum(x);
            y.mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
            return y;
          },
          {2}, {1.0, 2.0}, 1e-5),
      std::runtime_error);
}

TEST_CASE("finite_difference_check on x squared") {
  const double err = finite_difference_check(
      [](const Tensor<double>& x) { return sum(mul(x, x)); }, {1}, {3.0}, 1e-5);
  CHECK(err <= 1e-6);
}

TEST_CASE("forward results repeat bitwise for a fixed seed") {
  Rng a(123), b(123);
  Tensor<float> x = Tensor<float>::randn({16}, a, 1.0);
  Tensor<float> y = Tensor<float>::randn({16}, b, 1.0);
  for (std::size_t i = 0; i < 16; ++i) CHECK(x.data()[i] == y.data()[i]);
}

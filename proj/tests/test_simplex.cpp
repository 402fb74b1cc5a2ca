#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "entlab/rng.hpp"
#include "entlab/simplex.hpp"

using namespace entlab;

namespace {

std::vector<double> random_logits(Rng& rng, std::size_t n, double lo = -3.0, double hi = 3.0) {
  std::vector<double> z(n);
  for (auto& v : z) v = rng.uniform(lo, hi);
  return z;
}

double linf(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("softmax basics") {
  auto p = softmax(std::vector<double>{0.7, 0.7, 0.7, 0.7});
  for (double v : p.probs) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(p.support.size() == 4);
  CHECK(!p.tau.has_value());

  auto q = softmax(std::vector<double>{0.0, std::log(3.0)});
  CHECK(q.probs[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(q.probs[1] == doctest::Approx(0.75).epsilon(1e-12));

  Rng rng(3);
  auto z = random_logits(rng, 12);
  z[4] = 3.2;  // clear argmax with gap >= 0.1
  auto sharp = softmax(z, 0.01);
  CHECK(sharp.probs[4] >= 0.999);

  CHECK_THROWS_AS(softmax(std::vector<double>{1.0}, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(softmax(std::vector<double>{1.0, std::nan("")}), std::invalid_argument);
}

TEST_CASE("sparsemax hand cases") {
  auto p = sparsemax_exact(std::vector<double>{2.0, 1.0});
  CHECK(p.probs[0] == doctest::Approx(1.0));
  CHECK(p.probs[1] == doctest::Approx(0.0));
  CHECK(*p.tau == doctest::Approx(1.0));
  CHECK(p.support == std::vector<int>{0});

  auto q = sparsemax_exact(std::vector<double>{0.5, 0.5, -10.0});
  CHECK(q.probs[0] == doctest::Approx(0.5));
  CHECK(q.probs[1] == doctest::Approx(0.5));
  CHECK(q.probs[2] == doctest::Approx(0.0));

  Rng rng(5);
  for (int t = 0; t < 10; ++t) {
    const double x = rng.uniform(-20.0, 20.0);
    auto r = sparsemax_exact(std::vector<double>{x, x});
    CHECK(r.probs[0] == doctest::Approx(0.5));
    CHECK(r.probs[1] == doctest::Approx(0.5));
  }
}

TEST_CASE("entmax_bisect agrees with the sort-based sparsemax oracle") {
  Rng rng(11);
  for (int t = 0; t < 300; ++t) {
    const auto z = random_logits(rng, 1 + static_cast<std::size_t>(rng.uniform_int(0, 127)));
    CHECK(linf(entmax_bisect(z, 2.0).probs, sparsemax_exact(z).probs) <= 1e-6);
  }
}

TEST_CASE("entmax_bisect near alpha 1 approaches softmax") {
  Rng rng(13);
  for (int t = 0; t < 50; ++t) {
    const auto z = random_logits(rng, 20);
    CHECK(linf(entmax_bisect(z, 1.0001).probs, softmax(z).probs) <= 1e-3);
  }
}

TEST_CASE("entmax_bisect two-level case at alpha 1.5") {
  // k = 4 high entries; threshold needs delta >= 4^-0.5 / 0.5 = 1
  std::vector<double> z(32, 0.0);
  for (int i : {3, 9, 17, 25}) z[static_cast<std::size_t>(i)] = 1.2;
  auto p = entmax_bisect(z, 1.5);
  CHECK(p.support.size() == 4);
  for (int i : {3, 9, 17, 25})
    CHECK(p.probs[static_cast<std::size_t>(i)] == doctest::Approx(0.25).epsilon(1e-9));
}

TEST_CASE("entmax_bisect rejects alpha <= 1") {
  CHECK_THROWS_AS(entmax_bisect(std::vector<double>{1.0, 2.0}, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(entmax_bisect(std::vector<double>{1.0, 2.0}, 0.5), std::invalid_argument);
}

TEST_CASE("threshold ties are excluded from the support") {
  // two-level boundary: delta exactly k^-(alpha-1)/(alpha-1) with alpha=2, k=2
  std::vector<double> z(16, 0.0);
  z[4] = 0.5;
  z[11] = 0.5;
  auto p = entmax_bisect(z, 2.0);
  CHECK(p.support == std::vector<int>{4, 11});
  CHECK(p.probs[4] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(p.probs[0] == 0.0);
}

TEST_CASE("entmax shift invariance") {
  Rng rng(17);
  for (int t = 0; t < 50; ++t) {
    const double alpha = t % 2 ? 1.5 : 2.0;
    const auto z = random_logits(rng, 16);
    const double c = rng.uniform(-4.0, 4.0);
    auto zs = z;
    for (auto& v : zs) v += c;
    auto a = entmax_bisect(z, alpha);
    auto b = entmax_bisect(zs, alpha);
    CHECK(linf(a.probs, b.probs) <= 1e-9);
    CHECK(*b.tau - *a.tau == doctest::Approx((alpha - 1.0) * c).epsilon(1e-6));
  }
}

TEST_CASE("support size shrinks as alpha grows") {
  Rng rng(19);
  for (int t = 0; t < 200; ++t) {
    const auto z = random_logits(rng, 24);
    CHECK(entmax_bisect(z, 2.0).support.size() <= entmax_bisect(z, 1.5).support.size());
  }
}

TEST_CASE("entmax_vjp basics") {
  Rng rng(23);
  const auto z = random_logits(rng, 10);
  auto p = entmax_bisect(z, 1.5);
  // constant upstream: shift invariance makes the gradient vanish
  std::vector<double> ones(10, 0.7);
  auto g = entmax_vjp(p, ones);
  for (double v : g) CHECK(std::abs(v) <= 1e-12);

  // one-hot distribution at alpha 2: the Jacobian vanishes inside the cell
  auto oh = entmax_bisect(std::vector<double>{2.0, 1.0}, 2.0);
  auto g2 = entmax_vjp(oh, std::vector<double>{0.3, -0.9});
  CHECK(g2[0] == doctest::Approx(0.0));
  CHECK(g2[1] == doctest::Approx(0.0));
}

TEST_CASE("entmax_vjp matches finite differences on support-stable draws") {
  Rng rng(29);
  int done = 0;
  while (done < 20) {
    const double alpha = done % 2 ? 1.5 : 2.0;
    const auto z = random_logits(rng, 8);
    auto p = entmax_bisect(z, alpha);
    double margin = 1e300;
    for (std::size_t i = 0; i < z.size(); ++i)
      margin = std::min(margin, std::abs((alpha - 1.0) * z[i] - *p.tau));
    if (margin < 1e-4) continue;
    const auto upstream = random_logits(rng, 8, -1.0, 1.0);
    auto g = entmax_vjp(p, upstream);
    for (std::size_t i = 0; i < z.size(); ++i) {
      auto zp = z, zm = z;
      zp[i] += 1e-6;
      zm[i] -= 1e-6;
      double fd = 0.0;
      const auto pp = entmax_bisect(zp, alpha), pm = entmax_bisect(zm, alpha);
      for (std::size_t j = 0; j < z.size(); ++j)
        fd += upstream[j] * (pp.probs[j] - pm.probs[j]) / 2e-6;
      CHECK(std::abs(g[i] - fd) / std::max(std::abs(fd), 1e-8) <= 1e-4);
    }
    ++done;
  }
}

TEST_CASE("entropy and normalized entropy") {
  ProbDist uniform;
  uniform.alpha = 1.0;
  uniform.probs.assign(16, 1.0 / 16.0);
  for (int i = 0; i < 16; ++i) uniform.support.push_back(i);
  CHECK(entropy(uniform) == doctest::Approx(std::log(16.0)).epsilon(1e-12));
  CHECK(normalized_entropy(uniform, 16) == doctest::Approx(1.0).epsilon(1e-12));

  ProbDist onehot;
  onehot.probs = {0.0, 1.0, 0.0};
  onehot.support = {1};
  CHECK(entropy(onehot) == doctest::Approx(0.0));

  ProbDist k8;
  k8.probs.assign(65536, 0.0);
  for (int i = 0; i < 8; ++i) {
    k8.probs[static_cast<std::size_t>(i)] = 1.0 / 8.0;
    k8.support.push_back(i);
  }
  CHECK(normalized_entropy(k8, 65536) == doctest::Approx(0.1875).epsilon(1e-12));

  CHECK_THROWS_AS(normalized_entropy(onehot, 1), std::invalid_argument);
}

TEST_CASE("two_level_predict closed forms") {
  auto p = two_level_predict(1.0, 0.0, 2, 100, 2.0);
  CHECK(p.sparse_regime);
  CHECK(p.high_prob == doctest::Approx(0.5));
  CHECK(p.tau == doctest::Approx(0.5));

  auto q = two_level_predict(3.0, 0.5, 1, 50, 1.5);  // delta >= 2 for one-hot
  CHECK(q.sparse_regime);
  CHECK(q.high_prob == doctest::Approx(1.0));
  CHECK(q.tau == doctest::Approx(0.5 * 3.0 - 1.0));

  // below the threshold condition the closed form does not apply
  auto dense = two_level_predict(0.1, 0.0, 2, 100, 2.0);
  CHECK(!dense.sparse_regime);

  // prediction agrees with the bisection on the constructed vector
  std::vector<double> z(100, 0.0);
  z[7] = 1.0;
  z[42] = 1.0;
  auto dist = entmax_bisect(z, 2.0);
  CHECK(dist.probs[7] == doctest::Approx(p.high_prob).epsilon(1e-6));
  CHECK(*dist.tau == doctest::Approx(p.tau).epsilon(1e-6));

  CHECK(two_level_predict(1.0, 0.0, 2, 100, 2.0, 0.5).softmax_required_delta ==
        doctest::Approx(std::log(49.0)));
  CHECK_THROWS_AS(two_level_predict(0.0, 1.0, 2, 10, 2.0), std::invalid_argument);
  CHECK_THROWS_AS(two_level_predict(1.0, 0.0, 10, 10, 2.0), std::invalid_argument);
}

TEST_CASE("non_vanishing_check on the worked example") {
  const std::vector<double> z = {2.0, 1.0};  // tau = 1 at alpha 2
  CHECK(non_vanishing_check(z, 2.0, 0.9));
  CHECK(!non_vanishing_check(z, 2.0, 2.5));

  // softmax counterpart: any appended logit strictly lowers every prior prob
  auto base = softmax(z);
  std::vector<double> ext = {2.0, 1.0, -3.0};
  auto grown = softmax(ext);
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(grown.probs[i] < base.probs[i]);
}

TEST_CASE("simplex outputs are valid distributions") {
  Rng rng(31);
  for (int t = 0; t < 100; ++t) {
    const double alpha = 1.0 + rng.uniform(0.1, 3.0);
    const auto z = random_logits(rng, 1 + static_cast<std::size_t>(rng.uniform_int(0, 40)));
    auto p = entmax_bisect(z, alpha);
    double sum = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      sum += p.probs[i];
      CHECK(p.probs[i] >= 0.0);
      CHECK((p.probs[i] > 0.0) == ((alpha - 1.0) * z[i] > *p.tau));
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
}

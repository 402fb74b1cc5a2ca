#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "entlab/posenc.hpp"
#include "entlab/rng.hpp"
#include "entlab/simplex.hpp"

using namespace entlab;

TEST_CASE("alibi_bias formula and monotonicity") {
  CHECK(alibi_bias(5, 3, 0.5) == doctest::Approx(-1.0));
  CHECK(alibi_bias(7, 7, 2.0) == doctest::Approx(0.0));
  double prev = 1.0;
  for (std::size_t dist = 0; dist <= 10; ++dist) {
    const double b = alibi_bias(20, 20 - dist, 0.7);
    CHECK(b < prev);
    prev = b;
  }
  CHECK_THROWS_AS(alibi_bias(3, 5, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(alibi_bias(5, 3, 0.0), std::invalid_argument);
}

TEST_CASE("nape_assign layouts") {
  const auto h8 = nape_assign(8);
  for (std::size_t i = 0; i < 4; ++i) CHECK(h8[i].kind == PosKind::NoPE);
  CHECK(h8[4].alibi_slope == doctest::Approx(1.0));
  CHECK(h8[5].alibi_slope == doctest::Approx(0.5));
  CHECK(h8[6].alibi_slope == doctest::Approx(1.0 / 3.0));
  CHECK(h8[7].alibi_slope == doctest::Approx(0.25));

  const auto h2 = nape_assign(2);
  CHECK(h2[0].kind == PosKind::NoPE);
  CHECK(h2[1].kind == PosKind::ALiBi);
  CHECK(h2[1].alibi_slope == doctest::Approx(1.0));

  const auto h16 = nape_assign(16);
  std::size_t nope = 0;
  for (const auto& e : h16) nope += e.kind == PosKind::NoPE;
  CHECK(nope == 8);
  CHECK(h16[15].alibi_slope == doctest::Approx(1.0 / 8.0));

  // odd head counts round the NoPE half up
  const auto h5 = nape_assign(5);
  nope = 0;
  for (const auto& e : h5) nope += e.kind == PosKind::NoPE;
  CHECK(nope == 3);

  CHECK_THROWS_AS(nape_assign(1), std::invalid_argument);
}

TEST_CASE("alibi slope policies") {
  CHECK(alibi_slope(1, 8, AlibiSlopePolicy::Reciprocal) == doctest::Approx(1.0));
  CHECK(alibi_slope(4, 8, AlibiSlopePolicy::Reciprocal) == doctest::Approx(0.25));
  CHECK(alibi_slope(8, 8, AlibiSlopePolicy::Geometric) == doctest::Approx(0.5));
  CHECK(alibi_slope(4, 8, AlibiSlopePolicy::Geometric) == doctest::Approx(std::pow(2.0, -0.5)));
}

TEST_CASE("rope rotation basics") {
  PosEncoding cfg;
  cfg.kind = PosKind::RoPE;
  Rng rng(3);
  std::vector<double> v(8);
  for (auto& x : v) x = rng.normal(0.0, 1.0);

  const auto id = rope_rotate(v, 0, cfg);
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(id[i] == doctest::Approx(v[i]));

  const auto r = rope_rotate(v, 1234, cfg);
  double n0 = 0.0, n1 = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    n0 += v[i] * v[i];
    n1 += r[i] * r[i];
  }
  CHECK(std::sqrt(n1) == doctest::Approx(std::sqrt(n0)).epsilon(1e-9));

  CHECK_THROWS_AS(rope_rotate(std::vector<double>{1.0, 2.0, 3.0}, 1, cfg),
                  std::invalid_argument);
}

TEST_CASE("rope inner products depend only on relative position") {
  PosEncoding cfg;
  cfg.kind = PosKind::RoPE;
  Rng rng(5);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> q(8), k(8);
    for (auto& x : q) x = rng.normal(0.0, 1.0);
    for (auto& x : k) x = rng.normal(0.0, 1.0);
    const std::size_t i = static_cast<std::size_t>(rng.uniform_int(0, 500));
    const std::size_t j = static_cast<std::size_t>(rng.uniform_int(0, 500));
    const std::size_t c = static_cast<std::size_t>(rng.uniform_int(0, 300));
    const auto qi = rope_rotate(q, i, cfg);
    const auto kj = rope_rotate(k, j, cfg);
    const auto qi2 = rope_rotate(q, i + c, cfg);
    const auto kj2 = rope_rotate(k, j + c, cfg);
    double d1 = 0.0, d2 = 0.0;
    for (std::size_t x = 0; x < 8; ++x) {
      d1 += qi[x] * kj[x];
      d2 += qi2[x] * kj2[x];
    }
    CHECK(d1 == doctest::Approx(d2).epsilon(1e-9));
  }
}

TEST_CASE("rope scaling factor divides all angles uniformly") {
  PosEncoding one;
  one.kind = PosKind::RoPE;
  one.rope_factor = 1.0;
  PosEncoding sixteen = one;
  sixteen.rope_factor = 16.0;
  Rng rng(7);
  std::vector<double> v(8);
  for (auto& x : v) x = rng.normal(0.0, 1.0);
  const auto a = rope_rotate(v, 16, sixteen);
  const auto b = rope_rotate(v, 1, one);
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

TEST_CASE("alibi_entmax_cutoff formula cells") {
  CHECK(alibi_entmax_cutoff(0.0, 1.0, 1.0, 2.0) == 3);
  CHECK(alibi_entmax_cutoff(0.7, 0.7, 1.0, 2.0) == 2);
  CHECK(alibi_entmax_cutoff(0.0, 1.0, 1.0, 1e9) ==
        static_cast<long long>(std::floor(1.0 / 1.0 + 1.0)));
  CHECK_THROWS_AS(alibi_entmax_cutoff(1.0, 0.0, 1.0, 2.0), std::invalid_argument);
}

TEST_CASE("alibi hard window verified by brute-force entmax") {
  Rng rng(11);
  for (int t = 0; t < 50; ++t) {
    const double alpha = t % 2 ? 1.5 : 2.0;
    const double slope = rng.uniform(0.25, 1.0);
    const double zmin = rng.uniform(-1.0, 0.0), zmax = zmin + rng.uniform(0.2, 2.0);
    const long long cutoff = alibi_entmax_cutoff(zmin, zmax, slope, alpha);
    const std::size_t n = static_cast<std::size_t>(cutoff) + 24;
    const std::size_t i = n - 1;
    std::vector<double> z(n);
    for (std::size_t j = 0; j < n; ++j)
      z[j] = rng.uniform(zmin, zmax) + alibi_bias(i, j, slope);
    const ProbDist p = entmax_bisect(z, alpha);
    for (std::size_t j = 0; j < n; ++j)
      if (static_cast<long long>(i - j) > cutoff) CHECK(p.probs[j] == 0.0);
  }
}

TEST_CASE("rope_entmax_cutoffs formulas") {
  // tau/(alpha-1) equal to |q||k| makes the first crossing land at distance 0
  {
    std::vector<double> qn = {1.5}, kn = {2.0}, freqs = {0.1};
    const auto cut = rope_entmax_cutoffs(qn, kn, 1.0 * (2.0 - 1.0) * 3.0, 2.0, freqs);
    REQUIRE(cut.per_frequency.size() == 1);
    CHECK(!cut.per_frequency[0].nowhere);
    CHECK(cut.per_frequency[0].first_distance == 0);
  }
  // arccos argument 0 with g = 0.1: floor((pi/2)/0.1) = 15
  {
    std::vector<double> qn = {1.0}, kn = {1.0}, freqs = {0.1};
    const auto cut = rope_entmax_cutoffs(qn, kn, 0.0, 2.0, freqs);
    CHECK(cut.per_frequency[0].first_distance == 15);
  }
  // argument above 1: the frequency contributes nowhere
  {
    std::vector<double> qn = {0.5}, kn = {0.5}, freqs = {0.2};
    const auto cut = rope_entmax_cutoffs(qn, kn, 10.0, 2.0, freqs);
    CHECK(cut.per_frequency[0].nowhere);
  }
  // argument below -1: contributes everywhere
  {
    std::vector<double> qn = {0.5}, kn = {0.5}, freqs = {0.2};
    const auto cut = rope_entmax_cutoffs(qn, kn, -10.0, 2.0, freqs);
    CHECK(cut.per_frequency[0].everywhere);
  }
}

TEST_CASE("rope small-angle cutoff within one position of brute force") {
  // aligned chunks: z(dist) = sum_k |q_k| |k_k| cos(g_k dist)
  const std::vector<double> freqs = {0.05, 0.02};
  const std::vector<double> qn = {0.9, 0.7}, kn = {0.8, 0.6};
  const double alpha = 2.0;
  const std::size_t n = 40;  // within the small-angle domain pi / (2 * 0.05) = 31.4 for most
  const std::size_t i = n - 1;
  std::vector<double> z(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double dist = static_cast<double>(i - j);
    double v = 0.0;
    for (std::size_t k = 0; k < freqs.size(); ++k)
      v += qn[k] * kn[k] * std::cos(freqs[k] * dist);
    z[j] = v;
  }
  const ProbDist p = entmax_bisect(z, alpha);
  const auto cut = rope_entmax_cutoffs(qn, kn, *p.tau, alpha, freqs);
  REQUIRE(cut.small_angle_applies);

  long long first_zero = -1;
  for (long long dist = 0; dist < static_cast<long long>(n); ++dist) {
    if (p.probs[i - static_cast<std::size_t>(dist)] == 0.0) {
      first_zero = dist;
      break;
    }
  }
  REQUIRE(first_zero > 0);
  CHECK(std::abs(first_zero - (cut.small_angle_dmax + 1)) <= 1);
}

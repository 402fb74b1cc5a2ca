#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace entlab {

// Probability vector over a prefix of tokens, with the threshold and support
// set that the sparse transforms expose.
struct ProbDist {
  std::vector<double> probs;
  std::optional<double> tau;  // absent for softmax
  std::vector<int> support;   // indices with probs > 0, ascending
  double alpha = 1.0;         // 1.0 marks softmax
};

// Max-subtracted softmax of z / temperature. Support is every index.
ProbDist softmax(std::span<const double> z, double temperature = 1.0);

// Euclidean projection onto the simplex via sort-and-threshold; exact tau.
// Oracle for entmax_bisect at alpha = 2.
ProbDist sparsemax_exact(std::span<const double> z);

// alpha-entmax for alpha > 1 by bisection on tau, then exact renormalization
// over the detected support. Ties at the threshold are excluded.
ProbDist entmax_bisect(std::span<const double> z, double alpha, int iterations = 60);

// Jacobian-vector products. entmax_vjp uses s_i = p_i^(2-alpha) on the support.
std::vector<double> entmax_vjp(const ProbDist& dist, std::span<const double> upstream);
std::vector<double> softmax_vjp(const ProbDist& dist, std::span<const double> upstream);

// Shannon entropy with 0 log 0 = 0, natural log.
double entropy(const ProbDist& p);
// H / ln(n); n >= 2 required.
double normalized_entropy(const ProbDist& p, std::size_t n);

// Closed-form prediction for two-level logits: k entries at M, n-k at m.
struct TwoLevelPrediction {
  bool sparse_regime = false;          // false: below threshold, dense regime
  double tau = 0.0;                    // (alpha-1) M - k^-(alpha-1), sparse only
  double high_prob = 0.0;              // 1/k, sparse only
  double delta = 0.0;                  // M - m
  double delta_threshold = 0.0;        // k^-(alpha-1) / (alpha-1)
  double softmax_required_delta = 0.0; // theta ln((n-k)/k * c/(1-c))
};
TwoLevelPrediction two_level_predict(double M, double m, std::size_t k, std::size_t n,
                                     double alpha, double concentration_c = 0.5,
                                     double theta = 1.0);

// True iff appending logit b leaves the first-n probabilities unchanged
// within tol. Must hold whenever b <= tau(z) / (alpha - 1).
bool non_vanishing_check(std::span<const double> z, double alpha, double b,
                         double tol = 1e-9);

}  // namespace entlab

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "entlab/simplex.hpp"

namespace entlab {

// Per-head learnable scaler: beta_i = softplus(x_i . w_beta),
// gamma_i = s_clamp tanh(x_i . w_gamma), scale_i = delta + beta_i (ln n_i)^gamma_i.
struct ScalerParams {
  std::vector<double> w_beta;
  std::vector<double> w_gamma;
  double delta = 1.0;
  double s_clamp = 4.0;
};

struct ScaleSchedule {
  std::vector<double> scales;
  std::vector<std::size_t> context_lengths;
  // intermediates kept for the backward pass
  std::vector<double> beta, gamma, pre_beta, pre_gamma, log_n;
};

double softplus(double x);

// n_i defaults to the causal prefix length i+1; ln is clamped at n = 2.
ScaleSchedule compute_scales(std::span<const double> x, std::size_t n, std::size_t d,
                             const ScalerParams& params);
ScaleSchedule compute_scales(std::span<const double> x, std::size_t n, std::size_t d,
                             const ScalerParams& params,
                             std::span<const std::size_t> context_lengths);

struct ScaleGradients {
  std::vector<double> w_beta;   // length d
  std::vector<double> w_gamma;  // length d
  std::vector<double> x;        // length n*d
};

// Pull upstream d(loss)/d(scale_i) back onto w_beta, w_gamma and x.
ScaleGradients compute_scales_backward(std::span<const double> x, std::size_t n,
                                       std::size_t d, const ScalerParams& params,
                                       const ScaleSchedule& schedule,
                                       std::span<const double> upstream);

// entmax over scale * z. scale >= 0; gradient flows into z and scale via
// entmax_vjp on the scaled logits.
ProbDist asentmax(std::span<const double> z, double scale, double alpha);

// softmax(s_learn * ln(max(n, 2)) * z), the scalable-softmax baseline.
ProbDist ssmax(std::span<const double> z, double s_learn, std::size_t n);

// softmax(scale * z), sharing the ScaleSchedule machinery with ASEntmax.
ProbDist assmax(std::span<const double> z, double scale);

// Content-independent scaler: one raw (beta, gamma) pair per head.
double sentmax_scale(double beta_raw, double gamma_raw, std::size_t n,
                     double delta = 1.0, double s_clamp = 4.0);
// d(scale)/d(beta_raw) and d(scale)/d(gamma_raw)
void sentmax_scale_grad(double beta_raw, double gamma_raw, std::size_t n, double s_clamp,
                        double* d_beta_raw, double* d_gamma_raw);

// ---------------------------------------------------------------------------
// scaling-law fits for learned per-position scales
// ---------------------------------------------------------------------------

struct FitResult {
  double beta = 0.0;
  double gamma = 0.0;  // log-power only
  double delta = 0.0;  // log-power only
  double r2 = 0.0;
};

struct ScalingFits {
  FitResult linear;     // y = beta n
  FitResult log_fit;    // y = beta ln n
  FitResult log_power;  // y = delta + beta (ln n)^gamma
  bool degenerate = false;
};

// Least squares for the linear and log models; log-power fitted by a grid
// over gamma in [-4, 4] step 0.01 with closed-form (delta, beta) per gamma.
ScalingFits fit_scaling_models(std::span<const double> positions,
                               std::span<const double> learned_scales);

}  // namespace entlab

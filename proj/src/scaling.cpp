#include "entlab/scaling.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace entlab {

double softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

static double sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

ScaleSchedule compute_scales(std::span<const double> x, std::size_t n, std::size_t d,
                             const ScalerParams& params,
                             std::span<const std::size_t> context_lengths) {
  if (x.size() != n * d) throw std::invalid_argument("compute_scales: x must be n*d");
  if (params.w_beta.size() != d || params.w_gamma.size() != d)
    throw std::invalid_argument("compute_scales: projection width mismatch");
  if (params.s_clamp <= 0.0) throw std::invalid_argument("compute_scales: s_clamp must be > 0");
  if (context_lengths.size() != n)
    throw std::invalid_argument("compute_scales: context length per query required");
  ScaleSchedule out;
  out.scales.resize(n);
  out.context_lengths.assign(context_lengths.begin(), context_lengths.end());
  out.beta.resize(n);
  out.gamma.resize(n);
  out.pre_beta.resize(n);
  out.pre_gamma.resize(n);
  out.log_n.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = x.data() + i * d;
    double tb = 0.0, tg = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      tb += row[j] * params.w_beta[j];
      tg += row[j] * params.w_gamma[j];
    }
    const double L = std::log(static_cast<double>(std::max<std::size_t>(context_lengths[i], 2)));
    out.pre_beta[i] = tb;
    out.pre_gamma[i] = tg;
    out.beta[i] = softplus(tb);
    out.gamma[i] = params.s_clamp * std::tanh(tg);
    out.log_n[i] = L;
    out.scales[i] = params.delta + out.beta[i] * std::pow(L, out.gamma[i]);
  }
  return out;
}

ScaleSchedule compute_scales(std::span<const double> x, std::size_t n, std::size_t d,
                             const ScalerParams& params) {
  std::vector<std::size_t> lens(n);
  for (std::size_t i = 0; i < n; ++i) lens[i] = i + 1;
  return compute_scales(x, n, d, params, lens);
}

ScaleGradients compute_scales_backward(std::span<const double> x, std::size_t n,
                                       std::size_t d, const ScalerParams& params,
                                       const ScaleSchedule& schedule,
                                       std::span<const double> upstream) {
  if (upstream.size() != n)
    throw std::invalid_argument("compute_scales_backward: upstream length mismatch");
  ScaleGradients g;
  g.w_beta.assign(d, 0.0);
  g.w_gamma.assign(d, 0.0);
  g.x.assign(n * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double up = upstream[i];
    if (up == 0.0) continue;
    const double L = schedule.log_n[i];
    const double pw = std::pow(L, schedule.gamma[i]);
    // scale = delta + beta * L^gamma
    const double d_beta = up * pw;
    const double d_gamma = up * schedule.beta[i] * pw * std::log(L);
    const double d_tb = d_beta * sigmoid(schedule.pre_beta[i]);
    const double th = std::tanh(schedule.pre_gamma[i]);
    const double d_tg = d_gamma * params.s_clamp * (1.0 - th * th);
    const double* row = x.data() + i * d;
    double* gx = g.x.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) {
      g.w_beta[j] += d_tb * row[j];
      g.w_gamma[j] += d_tg * row[j];
      gx[j] += d_tb * params.w_beta[j] + d_tg * params.w_gamma[j];
    }
  }
  return g;
}

ProbDist asentmax(std::span<const double> z, double scale, double alpha) {
  if (scale < 0.0) throw std::invalid_argument("asentmax: scale must be >= 0");
  std::vector<double> scaled(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) scaled[i] = scale * z[i];
  return entmax_bisect(scaled, alpha);
}

ProbDist ssmax(std::span<const double> z, double s_learn, std::size_t n) {
  const double L = std::log(static_cast<double>(std::max<std::size_t>(n, 2)));
  std::vector<double> scaled(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) scaled[i] = s_learn * L * z[i];
  return softmax(scaled);
}

ProbDist assmax(std::span<const double> z, double scale) {
  std::vector<double> scaled(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) scaled[i] = scale * z[i];
  return softmax(scaled);
}

double sentmax_scale(double beta_raw, double gamma_raw, std::size_t n, double delta,
                     double s_clamp) {
  const double L = std::log(static_cast<double>(std::max<std::size_t>(n, 2)));
  return delta + softplus(beta_raw) * std::pow(L, s_clamp * std::tanh(gamma_raw));
}

void sentmax_scale_grad(double beta_raw, double gamma_raw, std::size_t n, double s_clamp,
                        double* d_beta_raw, double* d_gamma_raw) {
  const double L = std::log(static_cast<double>(std::max<std::size_t>(n, 2)));
  const double gamma = s_clamp * std::tanh(gamma_raw);
  const double pw = std::pow(L, gamma);
  const double th = std::tanh(gamma_raw);
  *d_beta_raw = sigmoid(beta_raw) * pw;
  *d_gamma_raw = softplus(beta_raw) * pw * std::log(L) * s_clamp * (1.0 - th * th);
}

// ---------------------------------------------------------------------------
// fits
// ---------------------------------------------------------------------------

namespace {

double r_squared(std::span<const double> y, std::span<const double> pred) {
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  double ss_tot = 0.0, ss_res = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ss_tot += (y[i] - mean) * (y[i] - mean);
    ss_res += (y[i] - pred[i]) * (y[i] - pred[i]);
  }
  if (ss_tot == 0.0) return 0.0;
  return 1.0 - ss_res / ss_tot;
}

}  // namespace

ScalingFits fit_scaling_models(std::span<const double> positions,
                               std::span<const double> learned_scales) {
  if (positions.size() != learned_scales.size())
    throw std::invalid_argument("fit_scaling_models: length mismatch");
  if (positions.size() < 4)
    throw std::invalid_argument("fit_scaling_models: need at least 4 points");
  const std::size_t n = positions.size();
  ScalingFits out;

  double ymean = 0.0;
  for (double v : learned_scales) ymean += v;
  ymean /= static_cast<double>(n);
  double yvar = 0.0;
  for (double v : learned_scales) yvar += (v - ymean) * (v - ymean);
  if (yvar == 0.0) {
    out.degenerate = true;
    return out;
  }

  std::vector<double> pred(n);

  // y = beta * n
  {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      num += positions[i] * learned_scales[i];
      den += positions[i] * positions[i];
    }
    out.linear.beta = den > 0.0 ? num / den : 0.0;
    for (std::size_t i = 0; i < n; ++i) pred[i] = out.linear.beta * positions[i];
    out.linear.r2 = r_squared(learned_scales, pred);
  }

  // y = beta * ln n
  std::vector<double> L(n);
  for (std::size_t i = 0; i < n; ++i) L[i] = std::log(std::max(positions[i], 2.0));
  {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      num += L[i] * learned_scales[i];
      den += L[i] * L[i];
    }
    out.log_fit.beta = den > 0.0 ? num / den : 0.0;
    for (std::size_t i = 0; i < n; ++i) pred[i] = out.log_fit.beta * L[i];
    out.log_fit.r2 = r_squared(learned_scales, pred);
  }

  // y = delta + beta * (ln n)^gamma over a gamma grid
  {
    double best_r2 = -1e300;
    for (int gi = -400; gi <= 400; ++gi) {
      const double gamma = gi * 0.01;
      double bmean = 0.0;
      std::vector<double> B(n);
      for (std::size_t i = 0; i < n; ++i) {
        B[i] = std::pow(L[i], gamma);
        bmean += B[i];
      }
      bmean /= static_cast<double>(n);
      double sxx = 0.0, sxy = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        sxx += (B[i] - bmean) * (B[i] - bmean);
        sxy += (B[i] - bmean) * (learned_scales[i] - ymean);
      }
      if (sxx <= 1e-300) continue;
      const double beta = sxy / sxx;
      const double delta = ymean - beta * bmean;
      for (std::size_t i = 0; i < n; ++i) pred[i] = delta + beta * B[i];
      const double r2 = r_squared(learned_scales, pred);
      if (r2 > best_r2) {
        best_r2 = r2;
        out.log_power.beta = beta;
        out.log_power.delta = delta;
        out.log_power.gamma = gamma;
        out.log_power.r2 = r2;
      }
    }
  }
  return out;
}

}  // namespace entlab

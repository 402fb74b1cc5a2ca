#include "entlab/simplex.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace entlab {

namespace {

void require_finite(std::span<const double> z, const char* who) {
  for (double v : z)
    if (!std::isfinite(v)) throw std::invalid_argument(std::string(who) + ": non-finite logit");
}

}  // namespace

ProbDist softmax(std::span<const double> z, double temperature) {
  if (temperature <= 0.0) throw std::invalid_argument("softmax: temperature must be > 0");
  if (z.empty()) throw std::invalid_argument("softmax: empty logits");
  require_finite(z, "softmax");
  ProbDist out;
  out.alpha = 1.0;
  out.probs.resize(z.size());
  double mx = z[0];
  for (double v : z) mx = std::max(mx, v);
  double se = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out.probs[i] = std::exp((z[i] - mx) / temperature);
    se += out.probs[i];
  }
  out.support.resize(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    out.probs[i] /= se;
    out.support[i] = static_cast<int>(i);
  }
  return out;
}

ProbDist sparsemax_exact(std::span<const double> z) {
  if (z.empty()) throw std::invalid_argument("sparsemax_exact: empty logits");
  require_finite(z, "sparsemax_exact");
  const std::size_t n = z.size();
  std::vector<double> sorted(z.begin(), z.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<double>());
  double cumsum = 0.0;
  double tau = sorted[0] - 1.0;
  std::size_t k = 0;
  for (std::size_t j = 0; j < n; ++j) {
    cumsum += sorted[j];
    // support size is the largest k with 1 + k z_(k) > sum of top k
    if (1.0 + static_cast<double>(j + 1) * sorted[j] > cumsum) {
      k = j + 1;
      tau = (cumsum - 1.0) / static_cast<double>(k);
    } else {
      break;
    }
  }
  ProbDist out;
  out.alpha = 2.0;
  out.tau = tau;
  out.probs.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = z[i] - tau;
    if (p > 0.0) {
      out.probs[i] = p;
      out.support.push_back(static_cast<int>(i));
    }
  }
  return out;
}

ProbDist entmax_bisect(std::span<const double> z, double alpha, int iterations) {
  if (alpha <= 1.0)
    throw std::invalid_argument("entmax_bisect: alpha must be > 1 (use softmax instead)");
  if (iterations < 1) throw std::invalid_argument("entmax_bisect: iterations must be >= 1");
  if (z.empty()) throw std::invalid_argument("entmax_bisect: empty logits");
  require_finite(z, "entmax_bisect");

  const double am1 = alpha - 1.0;
  const double inv_am1 = 1.0 / am1;
  double zmax = z[0];
  for (double v : z) zmax = std::max(zmax, v);

  // sum_i [(alpha-1) z_i - tau]_+^(1/(alpha-1)) is 0 at hi and >= 1 at lo
  double lo = am1 * zmax - 1.0;
  double hi = am1 * zmax;
  const auto partition = [&](double tau) {
    double s = 0.0;
    for (double v : z) {
      const double t = am1 * v - tau;
      if (t > 0.0) s += std::pow(t, inv_am1);
    }
    return s;
  };
  for (int it = 0; it < iterations; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (partition(mid) >= 1.0)
      lo = mid;
    else
      hi = mid;
  }
  // report the upper end so threshold ties land strictly outside the support
  const double tau = hi;

  ProbDist out;
  out.alpha = alpha;
  out.tau = tau;
  out.probs.assign(z.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double t = am1 * z[i] - tau;
    if (t > 0.0) {
      const double w = std::pow(t, inv_am1);
      out.probs[i] = w;
      total += w;
    }
  }
  if (total <= 0.0) {
    // bisection residue left the support empty; fall back to the argmax
    std::size_t best = 0;
    for (std::size_t i = 1; i < z.size(); ++i)
      if (z[i] > z[best]) best = i;
    out.probs[best] = 1.0;
    out.support.push_back(static_cast<int>(best));
    return out;
  }
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (out.probs[i] > 0.0) {
      out.probs[i] /= total;
      out.support.push_back(static_cast<int>(i));
    }
  }
  return out;
}

std::vector<double> entmax_vjp(const ProbDist& dist, std::span<const double> upstream) {
  if (dist.support.empty()) throw std::logic_error("entmax_vjp: empty support");
  if (upstream.size() != dist.probs.size())
    throw std::invalid_argument("entmax_vjp: upstream length mismatch");
  const double expo = 2.0 - dist.alpha;
  std::vector<double> out(dist.probs.size(), 0.0);
  double s_sum = 0.0, us_sum = 0.0;
  for (int i : dist.support) {
    const double s = std::pow(dist.probs[static_cast<std::size_t>(i)], expo);
    out[static_cast<std::size_t>(i)] = s;  // stash s_i
    s_sum += s;
    us_sum += upstream[static_cast<std::size_t>(i)] * s;
  }
  const double mean = us_sum / s_sum;
  for (int i : dist.support) {
    const std::size_t j = static_cast<std::size_t>(i);
    out[j] = out[j] * (upstream[j] - mean);
  }
  return out;
}

std::vector<double> softmax_vjp(const ProbDist& dist, std::span<const double> upstream) {
  if (upstream.size() != dist.probs.size())
    throw std::invalid_argument("softmax_vjp: upstream length mismatch");
  double dot = 0.0;
  for (std::size_t i = 0; i < dist.probs.size(); ++i) dot += upstream[i] * dist.probs[i];
  std::vector<double> out(dist.probs.size());
  for (std::size_t i = 0; i < dist.probs.size(); ++i)
    out[i] = dist.probs[i] * (upstream[i] - dot);
  return out;
}

double entropy(const ProbDist& p) {
  double h = 0.0;
  for (double v : p.probs)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

double normalized_entropy(const ProbDist& p, std::size_t n) {
  if (n < 2) throw std::invalid_argument("normalized_entropy: n must be >= 2");
  return entropy(p) / std::log(static_cast<double>(n));
}

TwoLevelPrediction two_level_predict(double M, double m, std::size_t k, std::size_t n,
                                     double alpha, double concentration_c, double theta) {
  if (!(M > m)) throw std::invalid_argument("two_level_predict: requires M > m");
  if (k < 1 || k >= n) throw std::invalid_argument("two_level_predict: requires 1 <= k < n");
  if (alpha <= 1.0) throw std::invalid_argument("two_level_predict: alpha must be > 1");
  if (!(concentration_c > 0.0 && concentration_c < 1.0))
    throw std::invalid_argument("two_level_predict: c in (0, 1) required");
  TwoLevelPrediction out;
  const double am1 = alpha - 1.0;
  out.delta = M - m;
  out.delta_threshold = std::pow(static_cast<double>(k), -am1) / am1;
  out.softmax_required_delta =
      theta * std::log(static_cast<double>(n - k) / static_cast<double>(k) *
                       concentration_c / (1.0 - concentration_c));
  if (out.delta >= out.delta_threshold) {
    out.sparse_regime = true;
    out.tau = am1 * M - std::pow(static_cast<double>(k), -am1);
    out.high_prob = 1.0 / static_cast<double>(k);
  }
  return out;
}

bool non_vanishing_check(std::span<const double> z, double alpha, double b, double tol) {
  const ProbDist base = entmax_bisect(z, alpha);
  std::vector<double> ext(z.begin(), z.end());
  ext.push_back(b);
  const ProbDist grown = entmax_bisect(ext, alpha);
  for (std::size_t i = 0; i < z.size(); ++i)
    if (std::abs(base.probs[i] - grown.probs[i]) > tol) return false;
  return true;
}

}  // namespace entlab

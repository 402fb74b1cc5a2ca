#include "entlab/posenc.hpp"

#include <cmath>
#include <stdexcept>

namespace entlab {

double alibi_bias(std::size_t i, std::size_t j, double slope) {
  if (slope <= 0.0) throw std::invalid_argument("alibi_bias: slope must be > 0");
  if (j > i) throw std::invalid_argument("alibi_bias: j > i is masked, not biased");
  return slope * (static_cast<double>(j) - static_cast<double>(i));
}

double alibi_slope(std::size_t h, std::size_t H, AlibiSlopePolicy policy) {
  if (h < 1 || h > H) throw std::invalid_argument("alibi_slope: head index out of range");
  switch (policy) {
    case AlibiSlopePolicy::Reciprocal:
      return 1.0 / static_cast<double>(h);
    case AlibiSlopePolicy::Geometric:
      return std::pow(2.0, -static_cast<double>(h) / static_cast<double>(H));
  }
  throw std::logic_error("alibi_slope: unknown policy");
}

std::vector<PosEncoding> nape_assign(std::size_t heads) {
  if (heads < 2) throw std::invalid_argument("nape_assign: needs at least 2 heads");
  const std::size_t nope = (heads + 1) / 2;
  std::vector<PosEncoding> out(heads);
  for (std::size_t h = 0; h < nope; ++h) out[h].kind = PosKind::NoPE;
  for (std::size_t h = nope; h < heads; ++h) {
    out[h].kind = PosKind::ALiBi;
    out[h].alibi_slope = 1.0 / static_cast<double>(h - nope + 1);
  }
  return out;
}

std::vector<double> rope_frequencies(std::size_t dim, double base) {
  if (dim % 2 != 0) throw std::invalid_argument("rope_frequencies: dimension must be even");
  if (base <= 0.0) throw std::invalid_argument("rope_frequencies: base must be > 0");
  std::vector<double> g(dim / 2);
  for (std::size_t k = 0; k < g.size(); ++k)
    g[k] = std::pow(base, -2.0 * static_cast<double>(k) / static_cast<double>(dim));
  return g;
}

void rope_rotate_inplace(std::span<double> v, std::size_t position,
                         std::span<const double> freqs, double factor) {
  if (v.size() != 2 * freqs.size())
    throw std::invalid_argument("rope_rotate: vector/frequency size mismatch");
  const double p = static_cast<double>(position) / factor;
  for (std::size_t k = 0; k < freqs.size(); ++k) {
    const double angle = freqs[k] * p;
    const double c = std::cos(angle), s = std::sin(angle);
    const double a = v[2 * k], b = v[2 * k + 1];
    v[2 * k] = a * c - b * s;
    v[2 * k + 1] = a * s + b * c;
  }
}

void rope_rotate_transpose_inplace(std::span<double> v, std::size_t position,
                                   std::span<const double> freqs, double factor) {
  if (v.size() != 2 * freqs.size())
    throw std::invalid_argument("rope_rotate: vector/frequency size mismatch");
  const double p = static_cast<double>(position) / factor;
  for (std::size_t k = 0; k < freqs.size(); ++k) {
    const double angle = freqs[k] * p;
    const double c = std::cos(angle), s = std::sin(angle);
    const double a = v[2 * k], b = v[2 * k + 1];
    v[2 * k] = a * c + b * s;
    v[2 * k + 1] = -a * s + b * c;
  }
}

std::vector<double> rope_rotate(std::span<const double> v, std::size_t position,
                                const PosEncoding& cfg) {
  if (v.size() % 2 != 0) throw std::invalid_argument("rope_rotate: odd dimension");
  if (cfg.rope_factor < 1.0) throw std::invalid_argument("rope_rotate: factor must be >= 1");
  std::vector<double> out(v.begin(), v.end());
  const auto freqs = rope_frequencies(v.size(), cfg.rope_base);
  rope_rotate_inplace(out, position, freqs, cfg.rope_factor);
  return out;
}

long long alibi_entmax_cutoff(double z_min, double z_max, double slope, double alpha) {
  if (z_max < z_min) throw std::invalid_argument("alibi_entmax_cutoff: z_max < z_min");
  if (slope <= 0.0) throw std::invalid_argument("alibi_entmax_cutoff: slope must be > 0");
  if (alpha <= 1.0) throw std::invalid_argument("alibi_entmax_cutoff: alpha must be > 1");
  return static_cast<long long>(
      std::floor((z_max - z_min + 1.0 / (alpha - 1.0)) / slope + 1.0));
}

RopeCutoffs rope_entmax_cutoffs(std::span<const double> q_chunk_norms,
                                std::span<const double> k_chunk_norms, double tau,
                                double alpha, std::span<const double> frequencies) {
  if (alpha <= 1.0) throw std::invalid_argument("rope_entmax_cutoffs: alpha must be > 1");
  if (q_chunk_norms.size() != k_chunk_norms.size() ||
      q_chunk_norms.size() != frequencies.size())
    throw std::invalid_argument("rope_entmax_cutoffs: chunk/frequency length mismatch");
  const double threshold = tau / (alpha - 1.0);
  RopeCutoffs out;

  double z_max = 0.0, decay = 0.0, g_max = 0.0;
  for (std::size_t k = 0; k < frequencies.size(); ++k) {
    const double c_k = 0.5 * q_chunk_norms[k] * k_chunk_norms[k];  // aligned chunks
    z_max += q_chunk_norms[k] * k_chunk_norms[k];
    decay += c_k * frequencies[k] * frequencies[k];
    g_max = std::max(g_max, frequencies[k]);
  }
  if (g_max > 0.0) out.small_angle_valid_to = M_PI / (2.0 * g_max);
  if (z_max > threshold && decay > 0.0) {
    out.small_angle_applies = true;
    out.small_angle_dmax =
        static_cast<long long>(std::floor(std::sqrt((z_max - threshold) / decay)));
  }

  out.per_frequency.resize(frequencies.size());
  for (std::size_t k = 0; k < frequencies.size(); ++k) {
    auto& fc = out.per_frequency[k];
    fc.frequency = frequencies[k];
    fc.period = 2.0 * M_PI / frequencies[k];
    const double denom = (alpha - 1.0) * q_chunk_norms[k] * k_chunk_norms[k];
    if (denom <= 0.0) {
      fc.nowhere = true;
      continue;
    }
    const double t = tau / denom;
    if (t > 1.0) {
      fc.nowhere = true;
    } else if (t < -1.0) {
      fc.everywhere = true;
    } else {
      fc.first_distance =
          static_cast<long long>(std::floor(std::acos(t) / frequencies[k]));
    }
  }
  return out;
}

}  // namespace entlab

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace entlab {

enum class PosKind { NoPE, ALiBi, RoPE };

// Per-head positional encoding selection.
struct PosEncoding {
  PosKind kind = PosKind::NoPE;
  double alibi_slope = 1.0;     // m_h > 0, ALiBi only
  double rope_base = 10000.0;   // base wavelength, RoPE only
  double rope_factor = 1.0;     // >= 1, divides all rotation angles
};

enum class AlibiSlopePolicy { Reciprocal, Geometric };  // 1/h vs 2^(-h/H)

// ALiBi bias m_h (j - i) for a causal pair j <= i.
double alibi_bias(std::size_t i, std::size_t j, double slope);

// ALiBi slope for 1-based head index h of H heads under a policy.
double alibi_slope(std::size_t h, std::size_t H, AlibiSlopePolicy policy);

// NAPE head layout: ceil(H/2) NoPE heads followed by floor(H/2) ALiBi heads
// with slopes 1/h, h counting ALiBi heads from 1.
std::vector<PosEncoding> nape_assign(std::size_t heads);

// Rotation frequencies g_k = base^(-2k/d) for k = 0..d/2-1.
std::vector<double> rope_frequencies(std::size_t dim, double base);

// Rotate each 2-chunk of v by angle g_k * position / factor.
std::vector<double> rope_rotate(std::span<const double> v, std::size_t position,
                                const PosEncoding& cfg);
void rope_rotate_inplace(std::span<double> v, std::size_t position,
                         std::span<const double> freqs, double factor);
// Transpose rotation (angle negated); the backward map of rope_rotate_inplace.
void rope_rotate_transpose_inplace(std::span<double> v, std::size_t position,
                                   std::span<const double> freqs, double factor);

// Hard attention window for entmax + ALiBi with bounded logits:
// floor((z_max - z_min + 1/(alpha-1)) / m + 1).
long long alibi_entmax_cutoff(double z_min, double z_max, double slope, double alpha);

// Entmax + RoPE cutoffs from the quadratic small-angle decay and the
// per-frequency cosine threshold crossings.
struct RopeFrequencyCutoff {
  double frequency = 0.0;
  // cosine threshold t = tau / ((alpha-1) |q_k| |k_k|)
  bool nowhere = false;     // t > 1: this frequency never clears the threshold
  bool everywhere = false;  // t < -1: this frequency clears it at any distance
  long long first_distance = 0;  // d_k0, valid when neither marker is set
  // subsequent window centers at (2 pi n ± d_k0) / g_k are derived from these
  double period = 0.0;  // 2 pi / g_k
};

struct RopeCutoffs {
  long long small_angle_dmax = 0;   // floor(sqrt((z_max - tau/(a-1)) / sum c_k g_k^2))
  double small_angle_valid_to = 0;  // pi / (2 g_max)
  bool small_angle_applies = false; // z_max above threshold and decay positive
  std::vector<RopeFrequencyCutoff> per_frequency;
};

RopeCutoffs rope_entmax_cutoffs(std::span<const double> q_chunk_norms,
                                std::span<const double> k_chunk_norms, double tau,
                                double alpha, std::span<const double> frequencies);

}  // namespace entlab

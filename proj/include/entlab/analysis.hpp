#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "entlab/model.hpp"
#include "entlab/scaling.hpp"
#include "entlab/simplex.hpp"

namespace entlab {

struct ExperimentCheck {
  std::string name;
  bool passed = false;
  double value = 0.0;
  double threshold = 0.0;
  std::string detail;
};

struct ExperimentReport {
  std::string tag;
  std::uint64_t seed = 0;
  std::vector<std::string> header;             // CSV column names
  std::vector<std::vector<std::string>> rows;  // one row per grid cell
  std::vector<ExperimentCheck> checks;
  std::vector<std::string> notes;

  bool passed() const;
  std::string to_csv() const;
  std::string summary_json() const;
  std::string file_name() const;  // "<tag>_<seed>.csv"
};

// ---------------------------------------------------------------------------
// bare attention stacks (identity projections, residuals, no FFN, d = 1)
// ---------------------------------------------------------------------------

// One layer over scalar values: u_i = sum_j p_ij x_j + x_i with logits x_i x_j.
// alpha = 1 selects softmax.
std::vector<double> bare_attention_layer(const std::vector<double>& x, double alpha);

// Same dynamics on a run-length-compressed sequence [(value, count), ...];
// exact for sequences whose prefix is constant.
struct CompressedSeq {
  std::vector<double> values;
  std::vector<std::size_t> counts;
};
CompressedSeq bare_attention_layer(const CompressedSeq& x, double alpha);

enum class CollapsePrefix { Constant, Random, Counterexample };

struct CollapseOptions {
  std::vector<double> alphas = {1.0, 1.5, 2.0};
  std::vector<std::size_t> lengths = {128, 512, 2048, 16384};
  CollapsePrefix prefix = CollapsePrefix::Counterexample;
  std::size_t layers = 6;  // the counterexample construction always runs 1 layer
  std::uint64_t seed = 0;
};
ExperimentReport collapse_experiment(const CollapseOptions& opts);

struct OversquashOptions {
  std::vector<Mechanism> mechanisms = {Mechanism::Softmax, Mechanism::Entmax};
  std::size_t sequence_tokens = 256;  // delayed-copy total length (rounded to 2L+1)
  std::size_t layers = 8;
  std::size_t hidden = 32;
  std::size_t heads = 4;
  std::size_t ffn_dim = 64;
  std::size_t train_steps = 300;
  std::size_t batch_size = 8;
  double peak_lr = 3e-3;
  std::size_t eval_batch = 4;
  std::size_t threads = 0;
  std::uint64_t seed = 0;
};
ExperimentReport oversquashing_experiment(const OversquashOptions& opts);

struct DispersionOptions {
  std::vector<std::size_t> lengths = {256, 1024, 4096, 16384, 65536};
  std::size_t softmax_seeds = 50;
  std::size_t planted_k = 8;
  double alpha = 1.5;
  std::uint64_t seed = 0;
};
ExperimentReport dispersion_experiment(const DispersionOptions& opts);

struct CentroidOptions {
  std::size_t n = 128;
  double alpha = 1.5;
  double z_min = -5.0, z_max = 5.0, noise_sigma = 0.5;
  std::vector<double> alibi_slopes = {1.0, 0.5, 0.25};
  std::size_t rope_chunks = 4;
  double rope_base = 100.0;
  std::uint64_t seed = 0;
};
ExperimentReport centroid_experiment(const CentroidOptions& opts);

struct FlatnessOptions {
  std::vector<double> sigmas = {0.5, 1.0};
  std::vector<std::size_t> lengths = {1024, 4096, 16384, 65536};
  std::size_t trials = 10000;
  std::size_t threads = 0;
  std::uint64_t seed = 0;
};
ExperimentReport range_flatness_experiment(const FlatnessOptions& opts);

// wraps fit_scaling_models as a report (the `analyze scaling-fit` subcommand)
ExperimentReport scaling_fit_report(const std::vector<double>& positions,
                                    const std::vector<double>& scales, std::uint64_t seed);

}  // namespace entlab

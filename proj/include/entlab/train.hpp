#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "entlab/model.hpp"
#include "entlab/tasks.hpp"

namespace entlab {

struct TrainConfig {
  ModelConfig model;
  TaskSpec task;
  std::size_t batch_size = 64;
  std::size_t total_steps = 30000;
  double peak_lr = 1e-3;
  std::size_t warmup_steps = 0;  // 0: 10K, scaled to 5% of total for short runs
  std::vector<std::size_t> eval_lengths;  // empty: {1,2,4,8} x max train length
  std::size_t eval_samples = 1000;
  std::size_t selection_multiple = 8;   // checkpoint selection at this x ID length
  std::size_t selection_samples = 128;  // samples per periodic selection eval
  std::size_t eval_every = 0;           // 0: total / 8
  std::size_t log_every = 50;
  std::size_t threads = 0;  // 0: hardware concurrency
  std::uint64_t seed = 0;

  void resolve();  // fill derived defaults
  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

// linear warmup to peak, then cosine decay to zero
double cosine_lr(std::size_t step, std::size_t warmup, std::size_t total, double peak);

struct AdamState {
  std::vector<std::vector<float>> m, v;
  std::size_t t = 0;
  std::size_t skipped = 0;  // steps dropped due to non-finite gradients
};

// AdamW with betas (0.9, 0.999), eps 1e-8, weight decay 0. Skips the whole
// step when any gradient is non-finite.
void adamw_step(std::vector<Parameter<float>>& params,
                const std::vector<std::vector<float>>& grads, AdamState& state, double lr);

struct EvalCell {
  std::size_t length = 0;
  double accuracy = 0.0;
  std::size_t samples = 0;
};

struct EvalTable {
  std::string mechanism, positional, task, metric, decode_mode;
  std::vector<EvalCell> cells;
  std::string to_csv() const;
  std::string to_json() const;
};

using Decoder =
    std::function<std::vector<int>(std::span<const int> prompt, std::size_t answer_len)>;

// Greedy decoding (generative) or per-position argmax (classification).
EvalTable evaluate(const Model<float>& model, const TaskSpec& task,
                   const std::vector<std::size_t>& lengths, std::size_t n_samples,
                   std::uint64_t seed, std::size_t threads = 0);
// Same scoring harness with an injected decoder (oracle decoders in tests).
EvalTable evaluate_with_decoder(const Decoder& decode, const TaskSpec& task,
                                const std::vector<std::size_t>& lengths,
                                std::size_t n_samples, std::uint64_t seed,
                                std::size_t threads = 0, bool classification = false);

struct LogRow {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double metric = -1.0;  // most recent selection accuracy, -1 before first eval
};

struct SelectionScore {
  double sel = 0.0;   // exact match at selection_multiple x
  double mid = 0.0;   // 4x fallback
  double low = 0.0;   // 2x fallback
  double lcp = 0.0;   // longest-common-prefix token fraction at 2x
  bool operator>(const SelectionScore& o) const;
};

struct TrainResult {
  Model<float> best_model;
  Model<float> final_model;
  std::vector<LogRow> log;
  bool diverged = false;
  std::size_t best_step = 0;
  SelectionScore best_score;
  std::size_t skipped_steps = 0;
  std::string log_csv() const;  // step,loss,lr,metric
};

TrainResult train(const TrainConfig& cfg, std::ostream* progress = nullptr);

}  // namespace entlab

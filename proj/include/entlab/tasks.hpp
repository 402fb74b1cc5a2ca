#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "entlab/rng.hpp"

namespace entlab {

enum class TaskKind { Copy, Reverse, Sort, MQMTAR, TwoBack, LocalCount, FlipFlop, MaxRetrieval };

std::string task_name(TaskKind k);
TaskKind task_from_name(const std::string& name);

// Token layout notes (ids reserved at the top/bottom of each vocab):
//   copy/reverse/sort: data in [0, vocab-2], separator = vocab-1
//   mqmtar: 0 empty, 1 key-value delimiter, 3 query delimiter / value separator,
//           content tokens in [4, vocab)
//   2back: special 0 prepended, data in [1, vocab)
//   local count: data in [1, vocab), labels are occurrence counts (classes)
//   flip-flop: 1 = w, 2 = i, 3 = r, 4 = bit 0, 5 = bit 1
//   max retrieval: input interleaves quantized keys (key = id / 1000) and
//           value classes; not vocabulary-bounded by design
struct TaskSpec {
  TaskKind kind = TaskKind::Copy;
  std::size_t vocab = 32;
  std::size_t len_lo = 32;
  std::size_t len_hi = 64;
  // task knobs, defaults per task in defaults()
  std::size_t mqmtar_queries = 4;
  double mqmtar_density = 0.8;
  std::size_t mqmtar_key_tokens = 2;
  std::size_t mqmtar_value_tokens = 2;
  std::size_t mqmtar_pool = 100000;
  double flipflop_p_write = 0.1;
  std::size_t localcount_max_run = 48;
  bool localcount_global = false;  // count across recurring clusters instead
  double maxret_min_gap = 1e-3;
  std::size_t maxret_classes = 16;

  bool classification() const {
    return kind == TaskKind::TwoBack || kind == TaskKind::LocalCount;
  }
  // size of the label space the model head must cover
  std::size_t n_classes() const;

  static TaskSpec defaults(TaskKind kind);
  static TaskSpec defaults(const std::string& name);
  std::string to_json() const;
  static TaskSpec from_json(const std::string& text);
};

struct TaskSample {
  std::vector<int> input;           // full training sequence (prompt + answer for generative)
  std::vector<int> target;          // answer tokens, or per-position labels
  std::vector<std::uint8_t> mask;   // per input position, 1 where loss applies
  std::string task;
  std::size_t length = 0;           // drawn in-distribution length knob
  std::size_t prompt_len = 0;       // generative: decode starts after this prefix
  bool classification = false;
};

// (seed, index) fully determines the sample, independent of generation order.
TaskSample generate_sample(const TaskSpec& spec, std::uint64_t seed, std::uint64_t index);
TaskSample generate_sample(const TaskSpec& spec, Rng& rng);

// fixed-length variant used by evaluation sweeps
TaskSample generate_sample_at_length(const TaskSpec& spec, std::size_t length,
                                     std::uint64_t seed, std::uint64_t index);

int exact_match(std::span<const int> pred, std::span<const int> target);
double token_accuracy(std::span<const int> preds, std::span<const int> labels,
                      std::span<const std::uint8_t> mask);

// one sample as a newline-delimited JSON record
std::string to_ndjson(const TaskSample& sample);

}  // namespace entlab

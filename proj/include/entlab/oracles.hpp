#pragma once

// Reference scorers for the synthetic tasks. Each one re-derives the expected
// answer by brute force from the documented token layout of a sample's input,
// independent of the generator internals. Used by `verify --suite tasks` and
// by the test suites.

#include <algorithm>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "entlab/tasks.hpp"

namespace entlab::oracles {

inline std::vector<int> seq_transform_answer(const TaskSample& s, const TaskSpec& spec) {
  const int sep = static_cast<int>(spec.vocab) - 1;
  std::vector<int> data;
  for (std::size_t i = 0; i < s.input.size(); ++i) {
    if (s.input[i] == sep) break;
    data.push_back(s.input[i]);
  }
  if (spec.kind == TaskKind::Reverse) std::reverse(data.begin(), data.end());
  if (spec.kind == TaskKind::Sort) std::sort(data.begin(), data.end());
  return data;
}

inline std::vector<int> mqmtar_answer(const TaskSample& s, const TaskSpec& spec) {
  const std::size_t kt = spec.mqmtar_key_tokens, vt = spec.mqmtar_value_tokens;
  std::unordered_map<std::uint64_t, std::vector<int>> table;
  const auto key_hash = [](const std::vector<int>& k) {
    std::uint64_t h = 0;
    for (int t : k) h = h * 1000003ULL + static_cast<std::uint64_t>(t) + 1;
    return h;
  };
  std::size_t i = 0;
  // pairs region: blocks "k.. 1 v..", empties are 0, first 3 starts the queries
  while (i < s.prompt_len && s.input[i] != 3) {
    if (s.input[i] == 0) {
      ++i;
      continue;
    }
    std::vector<int> key(s.input.begin() + static_cast<std::ptrdiff_t>(i),
                         s.input.begin() + static_cast<std::ptrdiff_t>(i + kt));
    if (s.input[i + kt] != 1) throw std::runtime_error("mqmtar oracle: malformed pair block");
    std::vector<int> value(s.input.begin() + static_cast<std::ptrdiff_t>(i + kt + 1),
                           s.input.begin() + static_cast<std::ptrdiff_t>(i + kt + 1 + vt));
    table[key_hash(key)] = value;
    i += kt + 1 + vt;
  }
  std::vector<int> answer;
  bool first = true;
  while (i < s.prompt_len) {
    if (s.input[i] != 3) throw std::runtime_error("mqmtar oracle: malformed query block");
    std::vector<int> key(s.input.begin() + static_cast<std::ptrdiff_t>(i + 1),
                         s.input.begin() + static_cast<std::ptrdiff_t>(i + 1 + kt));
    auto it = table.find(key_hash(key));
    if (it == table.end()) throw std::runtime_error("mqmtar oracle: queried key not found");
    if (!first) answer.push_back(3);
    first = false;
    answer.insert(answer.end(), it->second.begin(), it->second.end());
    i += 1 + kt;
  }
  return answer;
}

inline std::vector<int> twoback_labels(const TaskSample& s) {
  std::vector<int> labels(s.input.size(), 0);
  for (std::size_t i = 2; i < s.input.size(); ++i) labels[i] = s.input[i - 2];
  return labels;
}

inline std::vector<int> localcount_labels(const TaskSample& s, const TaskSpec& spec) {
  std::vector<int> labels(s.input.size(), 0);
  for (std::size_t i = 0; i < s.input.size(); ++i) {
    int count = 0;
    if (spec.localcount_global) {
      for (std::size_t j = 0; j <= i; ++j)
        if (s.input[j] == s.input[i]) ++count;
    } else {
      std::size_t j = i;
      while (true) {
        if (s.input[j] == s.input[i]) ++count;
        if (j == 0 || s.input[j - 1] != s.input[i]) break;
        --j;
      }
    }
    labels[i] = count;
  }
  return labels;
}

inline std::vector<int> flipflop_answer(const TaskSample& s) {
  constexpr int kW = 1, kR = 3, kBit0 = 4;
  int last = -1;
  std::size_t i = 0;
  while (i < s.prompt_len && s.input[i] != kR) {
    if (s.input[i] == kW) last = s.input[i + 1] - kBit0;
    i += 2;
  }
  if (last < 0) throw std::runtime_error("flipflop oracle: no write instruction");
  return {kBit0 + last};
}

inline std::vector<int> maxretrieval_answer(const TaskSample& s) {
  int best_key = -1, best_val = -1;
  for (std::size_t i = 0; i + 1 < s.prompt_len; i += 2) {
    if (s.input[i] > best_key) {
      best_key = s.input[i];
      best_val = s.input[i + 1];
    }
  }
  return {best_val};
}

// expected target for any sample, derived only from its input tokens
inline std::vector<int> expected_target(const TaskSample& s, const TaskSpec& spec) {
  switch (spec.kind) {
    case TaskKind::Copy:
    case TaskKind::Reverse:
    case TaskKind::Sort:
      return seq_transform_answer(s, spec);
    case TaskKind::MQMTAR:
      return mqmtar_answer(s, spec);
    case TaskKind::TwoBack:
      return twoback_labels(s);
    case TaskKind::LocalCount:
      return localcount_labels(s, spec);
    case TaskKind::FlipFlop:
      return flipflop_answer(s);
    case TaskKind::MaxRetrieval:
      return maxretrieval_answer(s);
  }
  throw std::logic_error("expected_target: unknown task");
}

}  // namespace entlab::oracles

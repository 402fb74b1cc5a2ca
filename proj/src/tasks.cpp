#include "entlab/tasks.hpp"

#include <algorithm>
#include <mutex>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

namespace entlab {

std::string task_name(TaskKind k) {
  switch (k) {
    case TaskKind::Copy: return "copy";
    case TaskKind::Reverse: return "reverse";
    case TaskKind::Sort: return "sort";
    case TaskKind::MQMTAR: return "mqmtar";
    case TaskKind::TwoBack: return "2back";
    case TaskKind::LocalCount: return "localcount";
    case TaskKind::FlipFlop: return "flipflop";
    case TaskKind::MaxRetrieval: return "maxretrieval";
  }
  throw std::logic_error("task_name: unknown task");
}

TaskKind task_from_name(const std::string& name) {
  if (name == "copy") return TaskKind::Copy;
  if (name == "reverse") return TaskKind::Reverse;
  if (name == "sort") return TaskKind::Sort;
  if (name == "mqmtar") return TaskKind::MQMTAR;
  if (name == "2back" || name == "twoback") return TaskKind::TwoBack;
  if (name == "localcount" || name == "local-count") return TaskKind::LocalCount;
  if (name == "flipflop" || name == "flip-flop") return TaskKind::FlipFlop;
  if (name == "maxretrieval" || name == "max-retrieval") return TaskKind::MaxRetrieval;
  throw std::invalid_argument("unknown task: " + name);
}

std::size_t TaskSpec::n_classes() const {
  if (kind == TaskKind::LocalCount)
    return localcount_global ? std::max(vocab, len_hi + 1)
                             : std::max(vocab, localcount_max_run + 1);
  if (kind == TaskKind::MaxRetrieval) return maxret_classes;
  return vocab;
}

TaskSpec TaskSpec::defaults(TaskKind kind) {
  TaskSpec s;
  s.kind = kind;
  switch (kind) {
    case TaskKind::Copy:
    case TaskKind::Reverse:
    case TaskKind::Sort:
      s.vocab = 32;
      s.len_lo = 32;
      s.len_hi = 64;
      break;
    case TaskKind::MQMTAR:
      s.vocab = 256;
      s.len_lo = 32;
      s.len_hi = 64;
      break;
    case TaskKind::TwoBack:
      s.vocab = 16;
      s.len_lo = 32;
      s.len_hi = 64;
      break;
    case TaskKind::LocalCount:
      s.vocab = 16;
      s.len_lo = 64;
      s.len_hi = 128;
      break;
    case TaskKind::FlipFlop:
      s.vocab = 7;
      s.len_lo = 32;
      s.len_hi = 64;
      break;
    case TaskKind::MaxRetrieval:
      s.vocab = 16;
      s.len_lo = 8;
      s.len_hi = 16;
      break;
  }
  return s;
}

TaskSpec TaskSpec::defaults(const std::string& name) { return defaults(task_from_name(name)); }

std::string TaskSpec::to_json() const {
  nlohmann::json j;
  j["task"] = task_name(kind);
  j["vocab"] = vocab;
  j["len_lo"] = len_lo;
  j["len_hi"] = len_hi;
  j["mqmtar_queries"] = mqmtar_queries;
  j["mqmtar_density"] = mqmtar_density;
  j["flipflop_p_write"] = flipflop_p_write;
  j["localcount_max_run"] = localcount_max_run;
  j["localcount_global"] = localcount_global;
  j["maxret_classes"] = maxret_classes;
  return j.dump();
}

TaskSpec TaskSpec::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  TaskSpec s = defaults(j.at("task").get<std::string>());
  s.vocab = j.value("vocab", s.vocab);
  s.len_lo = j.value("len_lo", s.len_lo);
  s.len_hi = j.value("len_hi", s.len_hi);
  s.mqmtar_queries = j.value("mqmtar_queries", s.mqmtar_queries);
  s.mqmtar_density = j.value("mqmtar_density", s.mqmtar_density);
  s.flipflop_p_write = j.value("flipflop_p_write", s.flipflop_p_write);
  s.localcount_max_run = j.value("localcount_max_run", s.localcount_max_run);
  s.localcount_global = j.value("localcount_global", s.localcount_global);
  s.maxret_classes = j.value("maxret_classes", s.maxret_classes);
  return s;
}

// ---------------------------------------------------------------------------
// generators
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint64_t kPoolSeed = 0x6d716d746172ULL;  // fixed global pool seed

struct KvPool {
  std::vector<std::vector<int>> keys;
  std::vector<std::vector<int>> values;
};

const KvPool& mqmtar_pool(const TaskSpec& spec) {
  static std::mutex mu;
  static std::unordered_map<std::string, KvPool> pools;
  std::lock_guard<std::mutex> lock(mu);
  const std::string key = std::to_string(spec.vocab) + ":" +
                          std::to_string(spec.mqmtar_key_tokens) + ":" +
                          std::to_string(spec.mqmtar_value_tokens) + ":" +
                          std::to_string(spec.mqmtar_pool);
  auto it = pools.find(key);
  if (it != pools.end()) return it->second;
  if (spec.vocab < 6) throw std::invalid_argument("mqmtar: vocab too small");
  KvPool pool;
  Rng rng(kPoolSeed);
  pool.keys.resize(spec.mqmtar_pool);
  pool.values.resize(spec.mqmtar_pool);
  for (std::size_t i = 0; i < spec.mqmtar_pool; ++i) {
    auto& k = pool.keys[i];
    auto& v = pool.values[i];
    k.resize(spec.mqmtar_key_tokens);
    v.resize(spec.mqmtar_value_tokens);
    for (auto& t : k) t = static_cast<int>(rng.uniform_int(4, static_cast<std::int64_t>(spec.vocab) - 1));
    for (auto& t : v) t = static_cast<int>(rng.uniform_int(4, static_cast<std::int64_t>(spec.vocab) - 1));
  }
  return pools.emplace(key, std::move(pool)).first->second;
}

void finish_generative(TaskSample& s, std::vector<int> prompt, std::vector<int> answer) {
  s.prompt_len = prompt.size();
  s.input = std::move(prompt);
  s.input.insert(s.input.end(), answer.begin(), answer.end());
  s.target = std::move(answer);
  // position t predicts input[t+1]; mark the positions whose next token is in
  // the answer region, i.e. t in [prompt_len-1, input.size()-2]
  s.mask.assign(s.input.size(), 0);
  for (std::size_t t = s.prompt_len - 1; t + 1 < s.input.size(); ++t) s.mask[t] = 1;
}

TaskSample gen_seq_transform(const TaskSpec& spec, std::size_t length, Rng& rng) {
  TaskSample s;
  s.task = task_name(spec.kind);
  s.length = length;
  const int sep = static_cast<int>(spec.vocab) - 1;
  std::vector<int> data(length);
  for (auto& t : data) t = static_cast<int>(rng.uniform_int(0, sep - 1));
  std::vector<int> answer = data;
  if (spec.kind == TaskKind::Reverse) std::reverse(answer.begin(), answer.end());
  if (spec.kind == TaskKind::Sort) std::sort(answer.begin(), answer.end());
  std::vector<int> prompt = data;
  prompt.push_back(sep);
  finish_generative(s, std::move(prompt), std::move(answer));
  return s;
}

TaskSample gen_2back(const TaskSpec& spec, std::size_t length, Rng& rng) {
  if (length < 3) throw std::invalid_argument("2back: length must be >= 3");
  TaskSample s;
  s.task = task_name(spec.kind);
  s.length = length;
  s.classification = true;
  s.input.resize(length);
  s.input[0] = 0;
  for (std::size_t i = 1; i < length; ++i)
    s.input[i] = static_cast<int>(rng.uniform_int(1, static_cast<std::int64_t>(spec.vocab) - 1));
  s.target.assign(length, 0);
  s.mask.assign(length, 0);
  for (std::size_t i = 2; i < length; ++i) {
    s.target[i] = s.input[i - 2];
    s.mask[i] = 1;
  }
  return s;
}

TaskSample gen_local_count(const TaskSpec& spec, std::size_t length, Rng& rng) {
  if (length < 1) throw std::invalid_argument("localcount: length must be >= 1");
  TaskSample s;
  s.task = task_name(spec.kind);
  s.length = length;
  s.classification = true;
  s.input.reserve(length);
  s.target.reserve(length);
  std::vector<int> global_count(spec.vocab, 0);
  int prev = -1;
  while (s.input.size() < length) {
    int tok = prev;
    while (tok == prev)
      tok = static_cast<int>(rng.uniform_int(1, static_cast<std::int64_t>(spec.vocab) - 1));
    prev = tok;
    const std::size_t run =
        static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(spec.localcount_max_run)));
    for (std::size_t r = 0; r < run && s.input.size() < length; ++r) {
      s.input.push_back(tok);
      if (spec.localcount_global) {
        s.target.push_back(++global_count[static_cast<std::size_t>(tok)]);
      } else {
        s.target.push_back(static_cast<int>(r + 1));
      }
    }
  }
  s.mask.assign(length, 1);
  return s;
}

TaskSample gen_flipflop(const TaskSpec& spec, std::size_t length, Rng& rng) {
  if (!(spec.flipflop_p_write > 0.0 && spec.flipflop_p_write < 1.0))
    throw std::invalid_argument("flipflop: p_write must be in (0, 1)");
  if (length < 3) throw std::invalid_argument("flipflop: length must be >= 3");
  TaskSample s;
  s.task = task_name(spec.kind);
  s.length = length;
  const std::size_t pairs = std::max<std::size_t>(1, (length - 1) / 2);
  constexpr int kW = 1, kI = 2, kR = 3, kBit0 = 4;
  std::vector<int> prompt;
  prompt.reserve(2 * pairs + 1);
  int last_written = 0;
  for (std::size_t p = 0; p < pairs; ++p) {
    const bool write = p == 0 || rng.uniform() < spec.flipflop_p_write;
    const int bit = static_cast<int>(rng.uniform_int(0, 1));
    prompt.push_back(write ? kW : kI);
    prompt.push_back(kBit0 + bit);
    if (write) last_written = bit;
  }
  prompt.push_back(kR);
  finish_generative(s, std::move(prompt), {kBit0 + last_written});
  return s;
}

TaskSample gen_mqmtar(const TaskSpec& spec, std::size_t length, Rng& rng) {
  const std::size_t pair_width = spec.mqmtar_key_tokens + 1 + spec.mqmtar_value_tokens;
  const std::size_t query_width = 1 + spec.mqmtar_key_tokens;
  const std::size_t query_region = spec.mqmtar_queries * query_width;
  if (length < query_region + pair_width)
    throw std::invalid_argument(
        "mqmtar: length too small for one key-value pair plus the query section (needs >= " +
        std::to_string(query_region + pair_width) + ")");
  const std::size_t pairs_region = length - query_region;
  const std::size_t num_pairs = static_cast<std::size_t>(
      spec.mqmtar_density * static_cast<double>(pairs_region) / static_cast<double>(pair_width));
  if (num_pairs < 1)
    throw std::invalid_argument("mqmtar: density leaves no room for a key-value pair");

  const KvPool& pool = mqmtar_pool(spec);
  TaskSample s;
  s.task = task_name(spec.kind);
  s.length = length;

  // pairs with distinct keys, drawn from the fixed global pool
  std::vector<std::size_t> chosen;
  std::unordered_set<std::uint64_t> seen;
  std::size_t attempts = 0;
  while (chosen.size() < num_pairs) {
    if (++attempts > 1000 * num_pairs + 1000)
      throw std::runtime_error("mqmtar: could not draw distinct keys from the pool");
    const std::size_t idx =
        static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool.keys.size()) - 1));
    std::uint64_t kh = 0;
    for (int t : pool.keys[idx]) kh = kh * 1315423911ULL + static_cast<std::uint64_t>(t) + 1;
    if (seen.insert(kh).second) chosen.push_back(idx);
  }

  // uniformly arrange pair blocks and empty cells: pick which units are blocks
  const std::size_t free_cells = pairs_region - num_pairs * pair_width;
  const std::size_t units = num_pairs + free_cells;
  std::vector<std::uint8_t> is_block(units, 0);
  {
    std::vector<std::size_t> idx(units);
    for (std::size_t i = 0; i < units; ++i) idx[i] = i;
    for (std::size_t i = 0; i < num_pairs; ++i) {
      const std::size_t j =
          i + static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(units - i) - 1));
      std::swap(idx[i], idx[j]);
      is_block[idx[i]] = 1;
    }
  }

  std::vector<int> prompt;
  prompt.reserve(length);
  std::size_t next_pair = 0;
  for (std::size_t u = 0; u < units; ++u) {
    if (is_block[u]) {
      const auto& k = pool.keys[chosen[next_pair]];
      const auto& v = pool.values[chosen[next_pair]];
      prompt.insert(prompt.end(), k.begin(), k.end());
      prompt.push_back(1);
      prompt.insert(prompt.end(), v.begin(), v.end());
      ++next_pair;
    } else {
      prompt.push_back(0);
    }
  }

  std::vector<int> answer;
  for (std::size_t q = 0; q < spec.mqmtar_queries; ++q) {
    const std::size_t pick =
        static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(num_pairs) - 1));
    const auto& k = pool.keys[chosen[pick]];
    const auto& v = pool.values[chosen[pick]];
    prompt.push_back(3);
    prompt.insert(prompt.end(), k.begin(), k.end());
    if (q > 0) answer.push_back(3);
    answer.insert(answer.end(), v.begin(), v.end());
  }
  finish_generative(s, std::move(prompt), std::move(answer));
  return s;
}

TaskSample gen_max_retrieval(const TaskSpec& spec, std::size_t length, Rng& rng) {
  if (length < 2) throw std::invalid_argument("maxretrieval: needs at least 2 items");
  TaskSample s;
  s.task = task_name(spec.kind);
  s.length = length;
  // distinct quantized keys guarantee the min-gap, key scalar = id * min_gap
  const std::int64_t key_range = static_cast<std::int64_t>(100 * length);
  std::unordered_set<std::int64_t> used;
  std::vector<int> keys(length);
  std::vector<int> values(length);
  for (std::size_t i = 0; i < length; ++i) {
    std::int64_t k = rng.uniform_int(0, key_range - 1);
    while (!used.insert(k).second) k = rng.uniform_int(0, key_range - 1);
    keys[i] = static_cast<int>(k);
    values[i] = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(spec.maxret_classes) - 1));
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < length; ++i)
    if (keys[i] > keys[best]) best = i;
  std::vector<int> prompt;
  prompt.reserve(2 * length);
  for (std::size_t i = 0; i < length; ++i) {
    prompt.push_back(keys[i]);
    prompt.push_back(values[i]);
  }
  finish_generative(s, std::move(prompt), {values[best]});
  return s;
}

}  // namespace

TaskSample generate_sample(const TaskSpec& spec, Rng& rng) {
  const std::size_t length =
      static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(spec.len_lo),
                                               static_cast<std::int64_t>(spec.len_hi)));
  switch (spec.kind) {
    case TaskKind::Copy:
    case TaskKind::Reverse:
    case TaskKind::Sort:
      return gen_seq_transform(spec, length, rng);
    case TaskKind::TwoBack:
      return gen_2back(spec, length, rng);
    case TaskKind::LocalCount:
      return gen_local_count(spec, length, rng);
    case TaskKind::FlipFlop:
      return gen_flipflop(spec, length, rng);
    case TaskKind::MQMTAR:
      return gen_mqmtar(spec, length, rng);
    case TaskKind::MaxRetrieval:
      return gen_max_retrieval(spec, length, rng);
  }
  throw std::logic_error("generate_sample: unknown task");
}

TaskSample generate_sample(const TaskSpec& spec, std::uint64_t seed, std::uint64_t index) {
  Rng rng = Rng(seed).substream("task-data", index);
  return generate_sample(spec, rng);
}

TaskSample generate_sample_at_length(const TaskSpec& spec, std::size_t length,
                                     std::uint64_t seed, std::uint64_t index) {
  TaskSpec fixed = spec;
  fixed.len_lo = fixed.len_hi = length;
  return generate_sample(fixed, seed, index);
}

int exact_match(std::span<const int> pred, std::span<const int> target) {
  if (pred.size() != target.size()) return 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] != target[i]) return 0;
  return 1;
}

double token_accuracy(std::span<const int> preds, std::span<const int> labels,
                      std::span<const std::uint8_t> mask) {
  if (preds.size() != labels.size() || preds.size() != mask.size())
    throw std::invalid_argument("token_accuracy: length mismatch");
  std::size_t total = 0, correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!mask[i]) continue;
    ++total;
    if (preds[i] == labels[i]) ++correct;
  }
  if (total == 0) return 0.0;
  return static_cast<double>(correct) / static_cast<double>(total);
}

std::string to_ndjson(const TaskSample& sample) {
  nlohmann::ordered_json j;
  j["task"] = sample.task;
  j["input"] = sample.input;
  j["target"] = sample.target;
  j["mask"] = std::vector<int>(sample.mask.begin(), sample.mask.end());
  j["len"] = sample.length;
  return j.dump();
}

}  // namespace entlab

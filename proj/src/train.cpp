#include "entlab/train.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "entlab/parallel.hpp"
#include "json.hpp"

namespace entlab {

void TrainConfig::resolve() {
  if (warmup_steps == 0) {
    warmup_steps = total_steps < 200000 ? std::max<std::size_t>(1, total_steps / 20) : 10000;
  }
  if (eval_every == 0) eval_every = std::max<std::size_t>(1, total_steps / 8);
  if (eval_lengths.empty()) {
    for (std::size_t mult : {1, 2, 4, 8}) eval_lengths.push_back(task.len_hi * mult);
  }
  if (threads == 0) threads = default_threads();
  model.vocab = std::max(model.vocab, task.n_classes());
}

void TrainConfig::validate() const {
  model.validate();
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (total_steps < 1) throw std::invalid_argument("TrainConfig: total_steps must be >= 1");
  if (warmup_steps > total_steps)
    throw std::invalid_argument("TrainConfig: warmup must not exceed total steps");
  for (std::size_t l : eval_lengths)
    if (l < task.len_hi)
      throw std::invalid_argument("TrainConfig: eval lengths must be >= max train length");
}

std::string TrainConfig::to_json() const {
  nlohmann::json j;
  j["model"] = nlohmann::json::parse(model.to_json());
  j["task"] = nlohmann::json::parse(task.to_json());
  j["batch_size"] = batch_size;
  j["total_steps"] = total_steps;
  j["peak_lr"] = peak_lr;
  j["warmup_steps"] = warmup_steps;
  j["eval_lengths"] = eval_lengths;
  j["eval_samples"] = eval_samples;
  j["selection_multiple"] = selection_multiple;
  j["selection_samples"] = selection_samples;
  j["eval_every"] = eval_every;
  j["log_every"] = log_every;
  j["threads"] = threads;
  j["seed"] = seed;
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  TrainConfig c;
  if (j.contains("model")) c.model = ModelConfig::from_json(j["model"].dump());
  if (j.contains("task")) c.task = TaskSpec::from_json(j["task"].dump());
  c.batch_size = j.value("batch_size", c.batch_size);
  c.total_steps = j.value("total_steps", c.total_steps);
  c.peak_lr = j.value("peak_lr", c.peak_lr);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  if (j.contains("eval_lengths")) c.eval_lengths = j["eval_lengths"].get<std::vector<std::size_t>>();
  c.eval_samples = j.value("eval_samples", c.eval_samples);
  c.selection_multiple = j.value("selection_multiple", c.selection_multiple);
  c.selection_samples = j.value("selection_samples", c.selection_samples);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.log_every = j.value("log_every", c.log_every);
  c.threads = j.value("threads", c.threads);
  c.seed = j.value("seed", c.seed);
  return c;
}

double cosine_lr(std::size_t step, std::size_t warmup, std::size_t total, double peak) {
  if (step > total) step = total;
  if (warmup > 0 && step < warmup)
    return peak * static_cast<double>(step) / static_cast<double>(warmup);
  if (total <= warmup) return peak;
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return peak * 0.5 * (1.0 + std::cos(M_PI * progress));
}

void adamw_step(std::vector<Parameter<float>>& params,
                const std::vector<std::vector<float>>& grads, AdamState& state, double lr) {
  if (grads.size() != params.size())
    throw std::invalid_argument("adamw_step: gradient count mismatch");
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t p = 0; p < params.size(); ++p) {
      state.m[p].assign(params[p].size(), 0.0f);
      state.v[p].assign(params[p].size(), 0.0f);
    }
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (grads[p].size() != params[p].size())
      throw std::invalid_argument("adamw_step: gradient shape mismatch at " + params[p].name);
    for (float g : grads[p])
      if (!std::isfinite(g)) {
        ++state.skipped;
        return;
      }
  }
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  ++state.t;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.t));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& value = params[p].value;
    auto& m = state.m[p];
    auto& v = state.v[p];
    const auto& g = grads[p];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = kBeta1 * static_cast<double>(m[i]) + (1.0 - kBeta1) * gi;
      const double vi = kBeta2 * static_cast<double>(v[i]) + (1.0 - kBeta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      value[i] = static_cast<float>(static_cast<double>(value[i]) -
                                    lr * mhat / (std::sqrt(vhat) + kEps));
    }
  }
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

namespace {

std::vector<int> greedy_decode(const Model<float>& model, std::span<const int> prompt,
                               std::size_t answer_len) {
  InferenceSession session(model);
  int next = 0;
  for (int t : prompt) next = session.feed(t);
  std::vector<int> out;
  out.reserve(answer_len);
  for (std::size_t s = 0; s < answer_len; ++s) {
    out.push_back(next);
    if (s + 1 < answer_len) next = session.feed(next);
  }
  return out;
}

std::vector<int> classify_positions(const Model<float>& model, std::span<const int> tokens) {
  InferenceSession session(model);
  std::vector<int> preds;
  preds.reserve(tokens.size());
  for (int t : tokens) preds.push_back(session.feed(t));
  return preds;
}

double lcp_fraction(std::span<const int> pred, std::span<const int> target) {
  const std::size_t n = std::min(pred.size(), target.size());
  std::size_t k = 0;
  while (k < n && pred[k] == target[k]) ++k;
  return target.empty() ? 0.0 : static_cast<double>(k) / static_cast<double>(target.size());
}

struct EvalOutcome {
  double accuracy = 0.0;
  double lcp = 0.0;
};

EvalOutcome eval_at_length(const Model<float>* model, const Decoder* decoder,
                           const TaskSpec& task, std::size_t length, std::size_t n_samples,
                           std::uint64_t seed, std::size_t threads, bool classification) {
  std::vector<double> acc(n_samples, 0.0), lcp(n_samples, 0.0);
  parallel_for(n_samples, threads, [&](std::size_t s) {
    const TaskSample sample = generate_sample_at_length(task, length, seed, s);
    if (classification) {
      std::vector<int> preds = model ? classify_positions(*model, sample.input)
                                     : (*decoder)(sample.input, sample.input.size());
      acc[s] = token_accuracy(preds, sample.target, sample.mask);
      lcp[s] = acc[s];
    } else {
      std::vector<int> pred;
      if (model) {
        pred = greedy_decode(*model, std::span<const int>(sample.input.data(), sample.prompt_len),
                             sample.target.size());
      } else {
        pred = (*decoder)(std::span<const int>(sample.input.data(), sample.prompt_len),
                          sample.target.size());
      }
      acc[s] = exact_match(pred, sample.target);
      lcp[s] = lcp_fraction(pred, sample.target);
    }
  });
  EvalOutcome out;
  for (std::size_t s = 0; s < n_samples; ++s) {
    out.accuracy += acc[s];
    out.lcp += lcp[s];
  }
  out.accuracy /= static_cast<double>(n_samples);
  out.lcp /= static_cast<double>(n_samples);
  return out;
}

}  // namespace

EvalTable evaluate(const Model<float>& model, const TaskSpec& task,
                   const std::vector<std::size_t>& lengths, std::size_t n_samples,
                   std::uint64_t seed, std::size_t threads) {
  if (lengths.empty()) throw std::invalid_argument("evaluate: empty length list");
  const bool classification = task.classification();
  EvalTable table;
  table.mechanism = mechanism_name(model.config().mechanism);
  table.positional = positional_name(model.config().positional);
  table.task = task_name(task.kind);
  table.metric = classification ? "token_accuracy" : "exact_match";
  table.decode_mode = classification ? "argmax" : "greedy";
  const std::uint64_t eval_seed = Rng(seed).substream("eval").state();
  for (std::size_t len : lengths) {
    const EvalOutcome o =
        eval_at_length(&model, nullptr, task, len, n_samples, eval_seed, threads, classification);
    table.cells.push_back({len, o.accuracy, n_samples});
  }
  return table;
}

EvalTable evaluate_with_decoder(const Decoder& decode, const TaskSpec& task,
                                const std::vector<std::size_t>& lengths,
                                std::size_t n_samples, std::uint64_t seed,
                                std::size_t threads, bool classification) {
  EvalTable table;
  table.mechanism = "oracle";
  table.positional = "none";
  table.task = task_name(task.kind);
  table.metric = classification ? "token_accuracy" : "exact_match";
  table.decode_mode = classification ? "argmax" : "greedy";
  const std::uint64_t eval_seed = Rng(seed).substream("eval").state();
  for (std::size_t len : lengths) {
    const EvalOutcome o =
        eval_at_length(nullptr, &decode, task, len, n_samples, eval_seed, threads, classification);
    table.cells.push_back({len, o.accuracy, n_samples});
  }
  return table;
}

std::string EvalTable::to_csv() const {
  std::ostringstream os;
  os << "mechanism,posenc,task,length,samples,metric,accuracy\n";
  for (const auto& c : cells)
    os << mechanism << ',' << positional << ',' << task << ',' << c.length << ','
       << c.samples << ',' << metric << ',' << c.accuracy << '\n';
  return os.str();
}

std::string EvalTable::to_json() const {
  nlohmann::ordered_json j;
  j["mechanism"] = mechanism;
  j["posenc"] = positional;
  j["task"] = task;
  j["metric"] = metric;
  j["decode_mode"] = decode_mode;
  j["cells"] = nlohmann::json::array();
  for (const auto& c : cells)
    j["cells"].push_back({{"length", c.length}, {"accuracy", c.accuracy}, {"samples", c.samples}});
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

bool SelectionScore::operator>(const SelectionScore& o) const {
  if (sel != o.sel) return sel > o.sel;
  if (mid != o.mid) return mid > o.mid;
  if (low != o.low) return low > o.low;
  return lcp > o.lcp;
}

std::string TrainResult::log_csv() const {
  std::ostringstream os;
  os << "step,loss,lr,metric\n";
  for (const auto& r : log)
    os << r.step << ',' << r.loss << ',' << r.lr << ',' << r.metric << '\n';
  return os.str();
}

namespace {

struct SampleLoss {
  double loss = 0.0;
  std::vector<std::vector<float>> grads;
};

SampleLoss sample_grads(const Model<float>& model, const TaskSample& sample) {
  SampleLoss out;
  const auto fwd = model.forward(sample.input);
  std::vector<int> targets(sample.input.size(), 0);
  if (sample.classification) {
    targets = sample.target;
  } else {
    for (std::size_t t = 0; t + 1 < sample.input.size(); ++t)
      if (sample.mask[t]) targets[t] = sample.input[t + 1];
  }
  Tensor<float> loss = cross_entropy(fwd.logits, targets, sample.mask);
  out.loss = static_cast<double>(loss.item());
  loss.backward();
  out.grads.reserve(fwd.param_leaves.size());
  for (const auto& leaf : fwd.param_leaves)
    out.grads.emplace_back(leaf.grad().begin(), leaf.grad().end());
  return out;
}

}  // namespace

TrainResult train(const TrainConfig& raw_cfg, std::ostream* progress) {
  TrainConfig cfg = raw_cfg;
  cfg.resolve();
  cfg.validate();

  Model<float> model(cfg.model);
  AdamState opt;
  const std::size_t sel_len = cfg.task.len_hi * cfg.selection_multiple;
  const std::size_t mid_len = cfg.task.len_hi * std::max<std::size_t>(cfg.selection_multiple / 2, 1);
  const std::size_t low_len = cfg.task.len_hi * std::max<std::size_t>(cfg.selection_multiple / 4, 1);
  const std::uint64_t data_seed = Rng(cfg.seed).substream("train-data").state();
  const std::uint64_t sel_seed = Rng(cfg.seed).substream("selection").state();

  TrainResult result{model, model, {}, false, 0, {}, 0};
  bool have_best = false;
  double metric_for_log = -1.0;

  std::vector<SampleLoss> batch(cfg.batch_size);
  std::vector<std::vector<float>> grads;

  for (std::size_t step = 0; step < cfg.total_steps; ++step) {
    const double lr = cosine_lr(step, cfg.warmup_steps, cfg.total_steps, cfg.peak_lr);

    parallel_for(cfg.batch_size, cfg.threads, [&](std::size_t b) {
      const TaskSample sample =
          generate_sample(cfg.task, data_seed, static_cast<std::uint64_t>(step) * cfg.batch_size + b);
      batch[b] = sample_grads(model, sample);
    });

    double loss = 0.0;
    for (const auto& s : batch) loss += s.loss;
    loss /= static_cast<double>(cfg.batch_size);
    if (!std::isfinite(loss)) {
      result.diverged = true;  // abort, keeping the last good parameters
      break;
    }

    // deterministic reduction in sample order, independent of thread count
    grads.assign(model.parameters().size(), {});
    for (std::size_t p = 0; p < grads.size(); ++p)
      grads[p].assign(model.parameters()[p].size(), 0.0f);
    const float inv_b = 1.0f / static_cast<float>(cfg.batch_size);
    for (const auto& s : batch)
      for (std::size_t p = 0; p < grads.size(); ++p) {
        const auto& g = s.grads[p];
        auto& acc = grads[p];
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i] * inv_b;
      }
    adamw_step(model.parameters(), grads, opt, lr);

    const bool last_step = step + 1 == cfg.total_steps;
    if ((step + 1) % cfg.eval_every == 0 || last_step) {
      SelectionScore score;
      const auto sel =
          eval_at_length(&model, nullptr, cfg.task, sel_len, cfg.selection_samples, sel_seed,
                         cfg.threads, cfg.task.classification());
      score.sel = sel.accuracy;
      const auto mid =
          eval_at_length(&model, nullptr, cfg.task, mid_len, cfg.selection_samples, sel_seed,
                         cfg.threads, cfg.task.classification());
      score.mid = mid.accuracy;
      const auto low =
          eval_at_length(&model, nullptr, cfg.task, low_len, cfg.selection_samples, sel_seed,
                         cfg.threads, cfg.task.classification());
      score.low = low.accuracy;
      score.lcp = low.lcp;
      metric_for_log = score.sel;
      if (!have_best || score > result.best_score) {
        have_best = true;
        result.best_score = score;
        result.best_model = model;
        result.best_step = step + 1;
      }
      if (progress)
        (*progress) << "step " << (step + 1) << " loss " << loss << " lr " << lr << " sel@"
                    << sel_len << " " << score.sel << " mid@" << mid_len << " " << score.mid
                    << " low@" << low_len << " " << score.low << "\n";
    }
    if (step % cfg.log_every == 0 || last_step)
      result.log.push_back({step, loss, lr, metric_for_log});
  }

  result.final_model = model;
  if (!have_best) result.best_model = model;
  result.skipped_steps = opt.skipped;
  return result;
}

}  // namespace entlab

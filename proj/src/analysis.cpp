#include "entlab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "entlab/parallel.hpp"
#include "entlab/posenc.hpp"
#include "entlab/rng.hpp"
#include "entlab/tasks.hpp"
#include "entlab/train.hpp"
#include "json.hpp"

namespace entlab {

bool ExperimentReport::passed() const {
  for (const auto& c : checks)
    if (!c.passed) return false;
  return true;
}

std::string ExperimentReport::to_csv() const {
  std::ostringstream os;
  os.precision(12);
  for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
  os << '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
    os << '\n';
  }
  return os.str();
}

std::string ExperimentReport::summary_json() const {
  nlohmann::ordered_json j;
  j["tag"] = tag;
  j["seed"] = seed;
  j["passed"] = passed();
  j["checks"] = nlohmann::json::array();
  for (const auto& c : checks)
    j["checks"].push_back({{"name", c.name},
                           {"passed", c.passed},
                           {"value", c.value},
                           {"threshold", c.threshold},
                           {"detail", c.detail}});
  j["notes"] = notes;
  return j.dump(2);
}

std::string ExperimentReport::file_name() const {
  return tag + "_" + std::to_string(seed) + ".csv";
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(12);
  os << v;
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// bare attention stacks
// ---------------------------------------------------------------------------

std::vector<double> bare_attention_layer(const std::vector<double>& x, double alpha) {
  const std::size_t n = x.size();
  std::vector<double> out(n);
  std::vector<double> z;
  for (std::size_t i = 0; i < n; ++i) {
    z.assign(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(i + 1));
    for (auto& v : z) v *= x[i];
    const ProbDist p = alpha > 1.0 ? entmax_bisect(z, alpha) : softmax(z);
    double acc = 0.0;
    for (std::size_t j = 0; j <= i; ++j) acc += p.probs[j] * x[j];
    out[i] = acc + x[i];
  }
  return out;
}

namespace {

// transform over a multiset of logits given as (value, count) groups;
// returns per-group probabilities (each member of the group shares it)
std::vector<double> compressed_transform(const std::vector<double>& z,
                                         const std::vector<std::size_t>& counts,
                                         double alpha) {
  const std::size_t g = z.size();
  std::vector<double> p(g, 0.0);
  if (alpha <= 1.0) {
    double mx = z[0];
    for (double v : z) mx = std::max(mx, v);
    double total = 0.0;
    for (std::size_t i = 0; i < g; ++i) {
      p[i] = std::exp(z[i] - mx);
      total += p[i] * static_cast<double>(counts[i]);
    }
    for (auto& v : p) v /= total;
    return p;
  }
  const double am1 = alpha - 1.0;
  const double inv = 1.0 / am1;
  double zmax = z[0];
  for (double v : z) zmax = std::max(zmax, v);
  double lo = am1 * zmax - 1.0, hi = am1 * zmax;
  const auto partition = [&](double tau) {
    double s = 0.0;
    for (std::size_t i = 0; i < g; ++i) {
      const double t = am1 * z[i] - tau;
      if (t > 0.0) s += static_cast<double>(counts[i]) * std::pow(t, inv);
    }
    return s;
  };
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (partition(mid) >= 1.0)
      lo = mid;
    else
      hi = mid;
  }
  double total = 0.0;
  for (std::size_t i = 0; i < g; ++i) {
    const double t = am1 * z[i] - hi;
    p[i] = t > 0.0 ? std::pow(t, inv) : 0.0;
    total += p[i] * static_cast<double>(counts[i]);
  }
  if (total <= 0.0) {
    // fall back to argmax group
    std::size_t best = 0;
    for (std::size_t i = 1; i < g; ++i)
      if (z[i] > z[best]) best = i;
    p[best] = 1.0 / static_cast<double>(counts[best]);
    return p;
  }
  for (auto& v : p) v /= total;
  return p;
}

}  // namespace

CompressedSeq bare_attention_layer(const CompressedSeq& x, double alpha) {
  // valid when the repeated groups are prefixes: each group's queries see only
  // whole earlier groups plus a prefix of their own group; exactness holds for
  // the constructions used here (constant prefix + trailing singletons)
  const std::size_t g = x.values.size();
  CompressedSeq out;
  out.values.resize(g);
  out.counts = x.counts;
  std::vector<double> z, p;
  std::vector<std::size_t> counts;
  for (std::size_t gi = 0; gi < g; ++gi) {
    // representative query: the LAST member of group gi; its prefix holds all
    // earlier groups in full and its own group in full
    z.clear();
    counts.clear();
    for (std::size_t gj = 0; gj <= gi; ++gj) {
      z.push_back(x.values[gi] * x.values[gj]);
      counts.push_back(x.counts[gj]);
    }
    p = compressed_transform(z, counts, alpha);
    double acc = 0.0;
    for (std::size_t gj = 0; gj <= gi; ++gj)
      acc += p[gj] * static_cast<double>(counts[gj]) * x.values[gj];
    out.values[gi] = acc + x.values[gi];
  }
  return out;
}

// ---------------------------------------------------------------------------
// collapse
// ---------------------------------------------------------------------------

ExperimentReport collapse_experiment(const CollapseOptions& opts) {
  ExperimentReport rep;
  rep.tag = "collapse";
  rep.seed = opts.seed;
  rep.header = {"mode", "alpha", "n", "layers", "difference", "seed"};

  const char* mode_name = opts.prefix == CollapsePrefix::Constant      ? "constant"
                          : opts.prefix == CollapsePrefix::Random      ? "random"
                                                                       : "counterexample";
  // the counterexample construction is a single-layer statement; with
  // residual stacking the difference grows geometrically instead
  const std::size_t layers = opts.prefix == CollapsePrefix::Counterexample ? 1 : opts.layers;
  const double phi = opts.prefix == CollapsePrefix::Counterexample ? 0.5 : 1.2;

  double softmax_diff_16k = -1.0, entmax_diff_16k = -1.0;
  double worst_counterexample_err = 0.0;
  const double expected_c = 0.5 * std::sqrt(0.5);

  for (double alpha : opts.alphas) {
    for (std::size_t cell = 0; cell < opts.lengths.size(); ++cell) {
      const std::size_t n = opts.lengths[cell];
      double diff = 0.0;
      if (opts.prefix == CollapsePrefix::Random) {
        Rng rng = Rng(opts.seed).substream("collapse", cell);
        std::vector<double> base(n);
        const double va = std::sqrt(phi);
        for (std::size_t i = 0; i + 1 < n; ++i) base[i] = rng.uniform(0.0, 1.0) / va;
        base[n - 1] = va;
        std::vector<double> ext = base;
        ext.push_back(va);
        for (std::size_t l = 0; l < layers; ++l) {
          base = bare_attention_layer(base, alpha);
          ext = bare_attention_layer(ext, alpha);
        }
        diff = std::abs(base[n - 1] - ext[n]);
      } else {
        const double b = opts.prefix == CollapsePrefix::Counterexample ? 0.0 : 1.0;
        const double va = std::sqrt(phi);
        CompressedSeq base{{b / va, va}, {n - 1, 1}};
        CompressedSeq ext{{b / va, va, va}, {n - 1, 1, 1}};
        for (std::size_t l = 0; l < layers; ++l) {
          base = bare_attention_layer(base, alpha);
          ext = bare_attention_layer(ext, alpha);
        }
        diff = std::abs(base.values[1] - ext.values[2]);
      }
      rep.rows.push_back({mode_name, fmt(alpha), std::to_string(n), std::to_string(layers),
                          fmt(diff), std::to_string(opts.seed)});
      if (n == 16384 && alpha == 1.0) softmax_diff_16k = diff;
      if (n == 16384 && alpha == 2.0) entmax_diff_16k = diff;
      if (opts.prefix == CollapsePrefix::Counterexample && alpha == 2.0)
        worst_counterexample_err = std::max(worst_counterexample_err, std::abs(diff - expected_c));
    }
  }

  if (opts.prefix == CollapsePrefix::Counterexample) {
    bool has_a2 = std::count(opts.alphas.begin(), opts.alphas.end(), 2.0) > 0;
    if (has_a2)
      rep.checks.push_back({"counterexample_limit_0.3536", worst_counterexample_err <= 0.01,
                            worst_counterexample_err, 0.01,
                            "max |difference - 0.3536| over n grid, alpha = 2"});
    if (softmax_diff_16k >= 0.0)
      rep.checks.push_back({"softmax_collapse_below_0.01", softmax_diff_16k < 0.01,
                            softmax_diff_16k, 0.01, "softmax difference at n = 16384"});
    if (entmax_diff_16k >= 0.0)
      rep.checks.push_back({"entmax_difference_at_least_0.1", entmax_diff_16k >= 0.1,
                            entmax_diff_16k, 0.1, "alpha = 2 difference at n = 16384"});
    if (softmax_diff_16k > 0.0 && entmax_diff_16k >= 0.0)
      rep.checks.push_back({"separation_ratio_10x", entmax_diff_16k / softmax_diff_16k >= 10.0,
                            entmax_diff_16k / softmax_diff_16k, 10.0,
                            "entmax / softmax difference at n = 16384"});
  } else if (opts.prefix == CollapsePrefix::Constant && softmax_diff_16k >= 0.0) {
    rep.checks.push_back({"softmax_collapse_below_0.01", softmax_diff_16k < 0.01,
                          softmax_diff_16k, 0.01, "softmax difference at n = 16384, 6 layers"});
  }
  rep.notes.push_back("bare attention stack: identity projections, residuals, no FFN, d = 1");
  if (opts.prefix == CollapsePrefix::Counterexample)
    rep.notes.push_back("counterexample mode evaluates its single-layer construction");
  return rep;
}

// ---------------------------------------------------------------------------
// over-squashing
// ---------------------------------------------------------------------------

ExperimentReport oversquashing_experiment(const OversquashOptions& opts) {
  ExperimentReport rep;
  rep.tag = "oversquash";
  rep.seed = opts.seed;
  rep.header = {"mechanism", "layer", "nonzero_entries", "total_entries", "grad_norm", "seed"};

  const std::size_t data_len = (opts.sequence_tokens - 1) / 2;
  TaskSpec task = TaskSpec::defaults(TaskKind::Copy);
  task.len_lo = task.len_hi = data_len;

  std::vector<double> total_nonzero(opts.mechanisms.size(), 0.0);
  std::vector<double> layer1_grad(opts.mechanisms.size(), 0.0);
  std::ptrdiff_t softmax_at = -1, entmax_at = -1;

  for (std::size_t mi = 0; mi < opts.mechanisms.size(); ++mi) {
    const Mechanism mech = opts.mechanisms[mi];
    if (mech == Mechanism::Softmax) softmax_at = static_cast<std::ptrdiff_t>(mi);
    if (mech == Mechanism::Entmax) entmax_at = static_cast<std::ptrdiff_t>(mi);

    TrainConfig tc;
    tc.model.layers = opts.layers;
    tc.model.heads = opts.heads;
    tc.model.hidden = opts.hidden;
    tc.model.ffn_dim = opts.ffn_dim;
    tc.model.vocab = task.vocab;
    tc.model.mechanism = mech;
    tc.model.positional = Positional::NAPE;
    tc.model.seed = opts.seed;
    tc.task = task;
    tc.batch_size = opts.batch_size;
    tc.total_steps = opts.train_steps;
    tc.peak_lr = opts.peak_lr;
    tc.eval_every = opts.train_steps + 1;  // selection evals are irrelevant here
    tc.eval_lengths = {data_len};
    tc.selection_multiple = 1;
    tc.selection_samples = 1;
    tc.threads = opts.threads;
    tc.seed = opts.seed;
    const TrainResult tr = train(tc);
    const Model<float>& model = tr.final_model;

    // averaged per-layer nonzero counts and input-gradient norms
    std::vector<double> nonzero(opts.layers, 0.0), total(opts.layers, 0.0),
        gnorm(opts.layers, 0.0);
    for (std::size_t b = 0; b < opts.eval_batch; ++b) {
      const TaskSample sample =
          generate_sample(task, Rng(opts.seed).substream("oversquash-eval").state(), b);
      auto fwd = model.forward(sample.input, true, true);
      std::vector<int> targets(sample.input.size(), 0);
      for (std::size_t t = 0; t + 1 < sample.input.size(); ++t)
        if (sample.mask[t]) targets[t] = sample.input[t + 1];
      Tensor<float> loss = cross_entropy(fwd.logits, targets, sample.mask);
      loss.backward();
      const PathCounts pc =
          count_gradient_paths(*fwd.trace, model.config().mechanism, fwd.layer_inputs);
      for (std::size_t l = 0; l < opts.layers; ++l) {
        nonzero[l] += static_cast<double>(pc.nonzero_per_layer[l]);
        total[l] += static_cast<double>(pc.total_per_layer[l]);
        gnorm[l] += pc.grad_norm_per_layer[l];
      }
    }
    for (std::size_t l = 0; l < opts.layers; ++l) {
      nonzero[l] /= static_cast<double>(opts.eval_batch);
      total[l] /= static_cast<double>(opts.eval_batch);
      gnorm[l] /= static_cast<double>(opts.eval_batch);
      rep.rows.push_back({mechanism_name(mech), std::to_string(l), fmt(nonzero[l]),
                          fmt(total[l]), fmt(gnorm[l]), std::to_string(opts.seed)});
      total_nonzero[mi] += nonzero[l];
    }
    layer1_grad[mi] = gnorm[0];
  }

  if (softmax_at >= 0 && entmax_at >= 0) {
    const double ratio = total_nonzero[static_cast<std::size_t>(entmax_at)] /
                         std::max(total_nonzero[static_cast<std::size_t>(softmax_at)], 1.0);
    rep.checks.push_back({"entmax_paths_below_10pct", ratio < 0.10, ratio, 0.10,
                          "entmax nonzero attention entries / softmax's, all layers"});
    const double g_ent = layer1_grad[static_cast<std::size_t>(entmax_at)];
    const double g_soft = layer1_grad[static_cast<std::size_t>(softmax_at)];
    rep.checks.push_back({"entmax_layer1_grad_exceeds_softmax", g_ent > g_soft,
                          g_soft > 0 ? g_ent / g_soft : g_ent, 1.0,
                          "layer-1 input gradient norm ratio (reported, direction asserted)"});
  }
  rep.notes.push_back("trained delayed-copy model, " + std::to_string(2 * data_len + 1) +
                      " tokens, " + std::to_string(opts.layers) + " layers, NAPE, " +
                      std::to_string(opts.train_steps) + " steps");
  rep.notes.push_back("gradient-norm magnitudes are reported, only the direction is asserted");
  return rep;
}

// ---------------------------------------------------------------------------
// dispersion
// ---------------------------------------------------------------------------

ExperimentReport dispersion_experiment(const DispersionOptions& opts) {
  ExperimentReport rep;
  rep.tag = "dispersion";
  rep.seed = opts.seed;
  rep.header = {"law", "n", "draw", "normalized_entropy", "seed"};

  const std::size_t n_max = *std::max_element(opts.lengths.begin(), opts.lengths.end());

  // (a) softmax on IID Uniform(-1, 1)
  double softmax_min_at_max_n = 1.0;
  for (std::size_t n : opts.lengths) {
    const std::size_t draws = n == n_max ? opts.softmax_seeds : 3;
    for (std::size_t s = 0; s < draws; ++s) {
      Rng rng = Rng(opts.seed).substream("dispersion-softmax", n * 1000 + s);
      std::vector<double> z(n);
      for (auto& v : z) v = rng.uniform(-1.0, 1.0);
      const double h = normalized_entropy(softmax(z), n);
      if (n == n_max) softmax_min_at_max_n = std::min(softmax_min_at_max_n, h);
      rep.rows.push_back({"softmax_uniform", std::to_string(n), std::to_string(s), fmt(h),
                          std::to_string(opts.seed)});
    }
  }

  // (b) entmax on planted two-level logits, k fixed
  double worst_planted_err = 0.0, worst_predict_err = 0.0;
  for (std::size_t n : opts.lengths) {
    std::vector<double> z(n, 0.0);
    for (std::size_t i = 0; i < opts.planted_k; ++i) z[i * (n / opts.planted_k)] = 1.0;
    const ProbDist p = entmax_bisect(z, opts.alpha);
    const double h = normalized_entropy(p, n);
    const double expect = std::log(static_cast<double>(opts.planted_k)) /
                          std::log(static_cast<double>(n));
    worst_planted_err = std::max(worst_planted_err, std::abs(h - expect));
    const TwoLevelPrediction pred = two_level_predict(1.0, 0.0, opts.planted_k, n, opts.alpha);
    if (pred.sparse_regime) {
      for (std::size_t i = 0; i < n; ++i) {
        const double want = z[i] == 1.0 ? pred.high_prob : 0.0;
        worst_predict_err = std::max(worst_predict_err, std::abs(p.probs[i] - want));
      }
      worst_predict_err = std::max(worst_predict_err, std::abs(*p.tau - pred.tau));
    }
    rep.rows.push_back({"entmax_planted_k" + std::to_string(opts.planted_k), std::to_string(n),
                        "0", fmt(h), std::to_string(opts.seed)});
  }

  // (c) sublinear support k = floor(sqrt(n))
  double worst_sublinear = 0.0;
  for (std::size_t n : opts.lengths) {
    const std::size_t k = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n))));
    if (k < 1 || k >= n) continue;
    std::vector<double> z(n, 0.0);
    for (std::size_t i = 0; i < k; ++i) z[i] = 1.0;
    const double h = normalized_entropy(entmax_bisect(z, 2.0), n);
    worst_sublinear = std::max(worst_sublinear, h);
    rep.rows.push_back({"entmax_sqrt_support", std::to_string(n), "0", fmt(h),
                        std::to_string(opts.seed)});
  }

  rep.checks.push_back({"softmax_dispersion_0.99", softmax_min_at_max_n >= 0.99,
                        softmax_min_at_max_n, 0.99,
                        "min normalized softmax entropy over seeds at n = " +
                            std::to_string(n_max)});
  rep.checks.push_back({"planted_entropy_log_k_over_log_n", worst_planted_err <= 1e-12,
                        worst_planted_err, 1e-12, "max |H/ln n - ln k/ln n|"});
  rep.checks.push_back({"planted_matches_two_level_predict", worst_predict_err <= 1e-9,
                        worst_predict_err, 1e-9, "max deviation from closed form"});
  rep.checks.push_back({"sublinear_support_bounded", worst_sublinear <= 0.5 + 0.01,
                        worst_sublinear, 0.51, "normalized entropy of sqrt(n)-support cells"});
  return rep;
}

// ---------------------------------------------------------------------------
// centroids
// ---------------------------------------------------------------------------

ExperimentReport centroid_experiment(const CentroidOptions& opts) {
  ExperimentReport rep;
  rep.tag = "centroid";
  rep.seed = opts.seed;
  rep.header = {"head_kind", "i", "centroid", "entropy", "seed"};

  struct HeadSpec {
    std::string name;
    PosKind kind;
    double slope = 0.0;
  };
  std::vector<HeadSpec> heads;
  heads.push_back({"nope", PosKind::NoPE, 0.0});
  for (double m : opts.alibi_slopes)
    heads.push_back({"alibi_m" + fmt(m), PosKind::ALiBi, m});
  heads.push_back({"rope", PosKind::RoPE, 0.0});

  std::vector<double> rope_g(opts.rope_chunks);
  for (std::size_t k = 0; k < opts.rope_chunks; ++k)
    rope_g[k] = std::pow(opts.rope_base, -2.0 * static_cast<double>(k) /
                                             static_cast<double>(2 * opts.rope_chunks));

  bool alibi_window_ok = true;
  double worst_violation = 0.0;
  bool degenerate_ok = true;

  for (std::size_t hs = 0; hs < heads.size(); ++hs) {
    const auto& head = heads[hs];
    Rng rng = Rng(opts.seed).substream("centroid", hs);
    // 1-based query positions, matching centroid_i = sum j p_ij
    for (std::size_t i = 1; i <= opts.n; ++i) {
      std::vector<double> z(i);
      double row_min = 1e300, row_max = -1e300;
      for (std::size_t j = 1; j <= i; ++j) {
        const double base = rng.uniform(opts.z_min, opts.z_max);
        const double prox = 0.2 * (opts.z_max - opts.z_min) *
                            (1.0 - 0.5 * static_cast<double>(i - j) / static_cast<double>(i));
        const double noise = rng.normal(0.0, opts.noise_sigma);
        double v = base + prox + noise;
        row_min = std::min(row_min, v);
        row_max = std::max(row_max, v);
        if (head.kind == PosKind::ALiBi)
          v += head.slope * (static_cast<double>(j) - static_cast<double>(i));
        if (head.kind == PosKind::RoPE) {
          double mod = 0.0;
          for (double g : rope_g) mod += std::cos(g * static_cast<double>(i - j));
          v *= mod / static_cast<double>(rope_g.size());
        }
        z[j - 1] = v;
      }
      const ProbDist p = entmax_bisect(z, opts.alpha);
      double centroid = 0.0;
      for (std::size_t j = 1; j <= i; ++j) centroid += static_cast<double>(j) * p.probs[j - 1];
      rep.rows.push_back({head.name, std::to_string(i), fmt(centroid), fmt(entropy(p)),
                          std::to_string(opts.seed)});
      if (i == 1 && std::abs(centroid - 1.0) > 1e-9) degenerate_ok = false;
      if (head.kind == PosKind::ALiBi) {
        const long long window =
            alibi_entmax_cutoff(row_min, row_max, head.slope, opts.alpha);
        const double lo = static_cast<double>(i) - static_cast<double>(window);
        if (centroid < lo - 1e-9 || centroid > static_cast<double>(i) + 1e-9) {
          alibi_window_ok = false;
          worst_violation = std::max(
              worst_violation, std::max(lo - centroid, centroid - static_cast<double>(i)));
        }
      }
    }
  }

  rep.checks.push_back({"alibi_centroid_within_window", alibi_window_ok, worst_violation, 0.0,
                        "centroid_i in [i - cutoff, i] for every ALiBi row"});
  rep.checks.push_back({"self_attention_centroid_is_1", degenerate_ok, degenerate_ok ? 0.0 : 1.0,
                        0.0, "centroid at i = 1 equals 1"});
  rep.notes.push_back("logits: Uniform(z_min, z_max) + proximity + Normal(0, sigma^2)");
  return rep;
}

// ---------------------------------------------------------------------------
// Gaussian range flatness
// ---------------------------------------------------------------------------

ExperimentReport range_flatness_experiment(const FlatnessOptions& opts) {
  ExperimentReport rep;
  rep.tag = "flatness";
  rep.seed = opts.seed;
  rep.header = {"sigma", "n", "mean_range", "bound", "ratio", "scaled_range", "seed"};

  struct Cell {
    double sigma;
    std::size_t n;
    double mean_range = 0.0;
  };
  std::vector<Cell> cells;
  for (double sigma : opts.sigmas)
    for (std::size_t n : opts.lengths) cells.push_back({sigma, n});

  parallel_for(cells.size(), opts.threads, [&](std::size_t c) {
    Rng rng = Rng(opts.seed).substream("flatness", c);
    double acc = 0.0;
    for (std::size_t t = 0; t < opts.trials; ++t) {
      double mx = -1e300, mn = 1e300;
      for (std::size_t i = 0; i < cells[c].n; ++i) {
        const double v = rng.normal(0.0, cells[c].sigma);
        mx = std::max(mx, v);
        mn = std::min(mn, v);
      }
      acc += mx - mn;
    }
    cells[c].mean_range = acc / static_cast<double>(opts.trials);
  });

  bool bound_ok = true;
  bool monotone_ok = true;
  bool flat_ok = true;
  double worst_flat = 0.0;
  for (double sigma : opts.sigmas) {
    double prev_ratio = -1.0;
    std::vector<double> scaled;
    for (const auto& cell : cells) {
      if (cell.sigma != sigma) continue;
      const double bound =
          2.0 * sigma * std::sqrt(2.0 * std::log(static_cast<double>(cell.n)));
      const double ratio = cell.mean_range / bound;
      const double scaled_range =
          cell.mean_range / std::sqrt(std::log(static_cast<double>(cell.n)));
      scaled.push_back(scaled_range);
      if (cell.mean_range > bound) bound_ok = false;
      if (prev_ratio >= 0.0 && ratio < prev_ratio - 0.01) monotone_ok = false;
      prev_ratio = ratio;
      rep.rows.push_back({fmt(sigma), std::to_string(cell.n), fmt(cell.mean_range), fmt(bound),
                          fmt(ratio), fmt(scaled_range), std::to_string(opts.seed)});
    }
    double mean = 0.0;
    for (double s : scaled) mean += s;
    mean /= static_cast<double>(scaled.size());
    for (double s : scaled) {
      const double rel = std::abs(s - mean) / mean;
      worst_flat = std::max(worst_flat, rel);
      if (rel > 0.10) flat_ok = false;
    }
  }

  rep.checks.push_back({"range_bound", bound_ok, bound_ok ? 0.0 : 1.0, 0.0,
                        "E[range] <= 2 sigma sqrt(2 ln n) at every cell"});
  rep.checks.push_back({"ratio_monotone_to_1", monotone_ok, monotone_ok ? 0.0 : 1.0, 0.0,
                        "E[range]/bound non-decreasing across n (0.01 slack)"});
  rep.checks.push_back({"scaled_range_flat_10pct", flat_ok, worst_flat, 0.10,
                        "gamma = -0.5 scaled range within 10% of its mean across n"});
  return rep;
}

ExperimentReport scaling_fit_report(const std::vector<double>& positions,
                                    const std::vector<double>& scales, std::uint64_t seed) {
  ExperimentReport rep;
  rep.tag = "scaling_fit";
  rep.seed = seed;
  rep.header = {"model", "beta", "gamma", "delta", "r2"};
  const ScalingFits fits = fit_scaling_models(positions, scales);
  rep.rows.push_back({"linear", fmt(fits.linear.beta), "", "", fmt(fits.linear.r2)});
  rep.rows.push_back({"log", fmt(fits.log_fit.beta), "", "", fmt(fits.log_fit.r2)});
  rep.rows.push_back({"log_power", fmt(fits.log_power.beta), fmt(fits.log_power.gamma),
                      fmt(fits.log_power.delta), fmt(fits.log_power.r2)});
  rep.checks.push_back({"fit_not_degenerate", !fits.degenerate, fits.degenerate ? 1.0 : 0.0,
                        0.0, "constant inputs are flagged"});
  return rep;
}

}  // namespace entlab

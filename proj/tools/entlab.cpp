#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "entlab/analysis.hpp"
#include "entlab/checkpoint.hpp"
#include "entlab/model.hpp"
#include "entlab/parallel.hpp"
#include "entlab/tasks.hpp"
#include "entlab/train.hpp"
#include "entlab/verify.hpp"
#include "json.hpp"

namespace {

constexpr const char* kVersion = "0.1.0";

// exit codes: 0 success, 1 property failure, 2 usage, 3 divergence,
// 4 artifact incompatibility
enum ExitCode { kOk = 0, kPropertyFailure = 1, kUsage = 2, kDivergence = 3, kArtifact = 4 };

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string version_hash(const std::string& config_dump) {
  std::ostringstream os;
  os << std::hex << fnv1a(std::string(kVersion) + "|" + config_dump);
  return os.str();
}

struct RunContext {
  std::string subcommand;
  nlohmann::ordered_json config;
  std::uint64_t seed = 0;
  std::vector<std::string> artifacts;
  std::string manifest_path;
  bool dry_run = false;

  // the manifest is written before any long computation starts
  bool emit() const {
    nlohmann::ordered_json j;
    j["subcommand"] = subcommand;
    j["config"] = config;
    j["seed"] = seed;
    j["artifacts"] = artifacts;
    j["version"] = kVersion;
    j["version_hash"] = version_hash(config.dump());
    if (dry_run) {
      std::cout << j.dump(2) << "\n";
      return false;  // print resolved config and stop
    }
    std::ofstream f(manifest_path);
    if (!f) throw std::runtime_error("cannot write manifest " + manifest_path);
    f << j.dump(2) << "\n";
    return true;
  }
};

std::size_t resolve_threads(std::size_t flag_value) {
  if (flag_value > 0) return flag_value;
  if (const char* env = std::getenv("ENTLAB_THREADS")) {
    const long v = std::atol(env);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return entlab::default_threads();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << content;
}

std::pair<std::size_t, std::size_t> parse_range(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) {
    const std::size_t v = std::stoull(text);
    return {v, v};
  }
  return {std::stoull(text.substr(0, colon)), std::stoull(text.substr(colon + 1))};
}

std::vector<std::size_t> doubling_grid(std::size_t lo, std::size_t hi) {
  std::vector<std::size_t> out;
  for (std::size_t v = lo; v <= hi; v *= 2) out.push_back(v);
  if (out.empty() || out.back() != hi) out.push_back(hi);
  return out;
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

int cmd_gen_data(const std::string& task, const std::string& len, std::size_t samples,
                 std::uint64_t seed, const std::string& out, bool stream, bool dry_run) {
  entlab::TaskSpec spec = entlab::TaskSpec::defaults(task);
  const auto [lo, hi] = parse_range(len);
  if (lo > hi) throw CLI::ValidationError("--len", "LO must be <= HI");
  spec.len_lo = lo;
  spec.len_hi = hi;

  RunContext ctx;
  ctx.subcommand = "gen-data";
  ctx.config = nlohmann::ordered_json{{"task", entlab::task_name(spec.kind)},
                                      {"spec", nlohmann::json::parse(spec.to_json())},
                                      {"samples", samples},
                                      {"stream", stream},
                                      {"out", out}};
  ctx.seed = seed;
  ctx.dry_run = dry_run;
  ctx.manifest_path = (stream ? "gen-data" : out) + std::string(".manifest.json");
  if (!stream) ctx.artifacts.push_back(out);

  // a probe sample surfaces length errors before the manifest is written
  (void)entlab::generate_sample(spec, seed, 0);

  if (!ctx.emit()) return kOk;

  std::ofstream file;
  std::ostream* os = &std::cout;
  if (!stream) {
    file.open(out);
    if (!file) throw std::runtime_error("cannot write " + out);
    os = &file;
  }
  for (std::size_t i = 0; i < samples; ++i)
    (*os) << entlab::to_ndjson(entlab::generate_sample(spec, seed, i)) << "\n";
  return kOk;
}

int cmd_train(const std::string& config_path, const std::string& mech,
              const std::string& posenc, double alpha, bool seed_given, std::uint64_t seed,
              const std::string& out_dir, std::size_t threads, bool dry_run) {
  entlab::TrainConfig cfg;
  if (!config_path.empty()) {
    std::ifstream f(config_path);
    if (!f) {
      std::cerr << "error: cannot open config file " << config_path << "\n";
      return kUsage;
    }
    std::stringstream ss;
    ss << f.rdbuf();
    cfg = entlab::TrainConfig::from_json(ss.str());
  }
  if (!mech.empty()) cfg.model.mechanism = entlab::mechanism_from_name(mech);
  if (!posenc.empty()) cfg.model.positional = entlab::positional_from_name(posenc);
  if (alpha > 0) cfg.model.alpha = alpha;
  if (seed_given) {
    cfg.seed = seed;
    cfg.model.seed = cfg.seed;
  }
  cfg.threads = resolve_threads(threads);
  cfg.resolve();
  cfg.validate();

  RunContext ctx;
  ctx.subcommand = "train";
  ctx.config = nlohmann::json::parse(cfg.to_json());
  ctx.seed = cfg.seed;
  ctx.dry_run = dry_run;
  ctx.manifest_path = out_dir + "/train.manifest.json";
  ctx.artifacts = {out_dir + "/best.ckpt", out_dir + "/last.ckpt", out_dir + "/train_log.csv"};
  if (!ctx.emit()) return kOk;

  const entlab::TrainResult result = entlab::train(cfg, &std::cout);
  entlab::save_model_checkpoint(out_dir + "/best.ckpt", result.best_model);
  entlab::save_model_checkpoint(out_dir + "/last.ckpt", result.final_model);
  write_file(out_dir + "/train_log.csv", result.log_csv());
  if (result.diverged) {
    std::cerr << "training diverged; last good checkpoint retained\n";
    return kDivergence;
  }
  std::cout << "best step " << result.best_step << " selection score " << result.best_score.sel
            << "\n";
  return kOk;
}

int cmd_eval(const std::string& ckpt, const std::string& lengths_csv, std::size_t samples,
             const std::string& task_override, const std::string& out, std::uint64_t seed,
             std::size_t threads, bool dry_run) {
  std::vector<std::size_t> lengths;
  {
    std::stringstream ss(lengths_csv);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) lengths.push_back(std::stoull(item));
  }
  if (lengths.empty()) {
    std::cerr << "error: empty length list\n";
    return kUsage;
  }
  entlab::Model<float> model = entlab::load_model_checkpoint(ckpt);
  entlab::TaskSpec task = entlab::TaskSpec::defaults(
      task_override.empty() ? std::string("copy") : task_override);

  RunContext ctx;
  ctx.subcommand = "eval";
  ctx.config = nlohmann::ordered_json{{"ckpt", ckpt},
                                      {"task", entlab::task_name(task.kind)},
                                      {"lengths", lengths},
                                      {"samples", samples}};
  ctx.seed = seed;
  ctx.dry_run = dry_run;
  ctx.manifest_path = (out.empty() ? "eval" : out) + std::string(".manifest.json");
  if (!out.empty()) ctx.artifacts = {out + ".csv", out + ".json"};
  if (!ctx.emit()) return kOk;

  const entlab::EvalTable table =
      entlab::evaluate(model, task, lengths, samples, seed, resolve_threads(threads));
  std::cout << table.to_csv();
  if (!out.empty()) {
    write_file(out + ".csv", table.to_csv());
    write_file(out + ".json", table.to_json());
  }
  return kOk;
}

int run_report(entlab::ExperimentReport rep, const std::string& out_dir) {
  write_file(out_dir + "/" + rep.file_name(), rep.to_csv());
  write_file(out_dir + "/" + rep.tag + "_" + std::to_string(rep.seed) + "_summary.json",
             rep.summary_json());
  std::cout << rep.summary_json() << "\n";
  return rep.passed() ? kOk : kPropertyFailure;
}

int cmd_analyze(const std::string& experiment, const std::string& alphas_csv,
                const std::string& lengths_range, const std::string& mode,
                const std::string& input_csv, const std::string& out_dir, std::uint64_t seed,
                std::size_t threads, bool dry_run) {
  RunContext ctx;
  ctx.subcommand = "analyze";
  ctx.config = nlohmann::ordered_json{{"experiment", experiment},
                                      {"alphas", alphas_csv},
                                      {"lengths", lengths_range},
                                      {"mode", mode},
                                      {"input", input_csv},
                                      {"out_dir", out_dir}};
  ctx.seed = seed;
  ctx.dry_run = dry_run;
  ctx.manifest_path = out_dir + "/analyze_" + experiment + ".manifest.json";
  if (!ctx.emit()) return kOk;

  std::vector<double> alphas;
  if (!alphas_csv.empty()) {
    std::stringstream ss(alphas_csv);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) alphas.push_back(std::stod(item));
  }

  if (experiment == "collapse") {
    entlab::CollapseOptions opts;
    opts.seed = seed;
    if (!alphas.empty()) opts.alphas = alphas;
    if (!lengths_range.empty()) {
      const auto [lo, hi] = parse_range(lengths_range);
      opts.lengths = doubling_grid(lo, hi);
    }
    if (mode == "constant") opts.prefix = entlab::CollapsePrefix::Constant;
    if (mode == "random") opts.prefix = entlab::CollapsePrefix::Random;
    return run_report(entlab::collapse_experiment(opts), out_dir);
  }
  if (experiment == "oversquash") {
    entlab::OversquashOptions opts;
    opts.seed = seed;
    opts.threads = resolve_threads(threads);
    return run_report(entlab::oversquashing_experiment(opts), out_dir);
  }
  if (experiment == "dispersion") {
    entlab::DispersionOptions opts;
    opts.seed = seed;
    if (!lengths_range.empty()) {
      const auto [lo, hi] = parse_range(lengths_range);
      opts.lengths = doubling_grid(lo, hi);
    }
    return run_report(entlab::dispersion_experiment(opts), out_dir);
  }
  if (experiment == "centroid") {
    entlab::CentroidOptions opts;
    opts.seed = seed;
    return run_report(entlab::centroid_experiment(opts), out_dir);
  }
  if (experiment == "flatness") {
    entlab::FlatnessOptions opts;
    opts.seed = seed;
    opts.threads = resolve_threads(threads);
    return run_report(entlab::range_flatness_experiment(opts), out_dir);
  }
  if (experiment == "scaling-fit") {
    if (input_csv.empty()) {
      std::cerr << "error: scaling-fit requires --input\n";
      return kUsage;
    }
    std::ifstream f(input_csv);
    if (!f) {
      std::cerr << "error: cannot open " << input_csv << "\n";
      return kUsage;
    }
    std::vector<double> pos, scale;
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string a, b;
      if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',')) continue;
      try {
        const double x = std::stod(a);
        const double y = std::stod(b);
        pos.push_back(x);
        scale.push_back(y);
      } catch (...) {
        continue;  // header row
      }
    }
    return run_report(entlab::scaling_fit_report(pos, scale, seed), out_dir);
  }
  std::cerr << "error: unknown experiment " << experiment << "\n";
  return kUsage;
}

int cmd_verify(const std::string& suite, std::uint64_t seed, bool dry_run) {
  RunContext ctx;
  ctx.subcommand = "verify";
  ctx.config = nlohmann::ordered_json{{"suite", suite}};
  ctx.seed = seed;
  ctx.dry_run = dry_run;
  ctx.manifest_path = "verify_" + suite + ".manifest.json";
  if (!ctx.emit()) return kOk;

  std::vector<entlab::PropertyResult> results;
  const auto run = [&](const std::string& name) {
    if (name == "transforms") {
      auto r = entlab::verify_transforms(seed);
      results.insert(results.end(), r.begin(), r.end());
    } else if (name == "gradients") {
      auto r = entlab::verify_gradients(seed);
      results.insert(results.end(), r.begin(), r.end());
    } else if (name == "tasks") {
      auto r = entlab::verify_tasks(seed);
      results.insert(results.end(), r.begin(), r.end());
    }
  };
  if (suite == "all") {
    run("transforms");
    run("gradients");
    run("tasks");
  } else {
    run(suite);
  }
  bool all_passed = true;
  for (const auto& p : results) {
    std::cout << (p.passed ? "[PASS] " : "[FAIL] ") << p.name << " (" << p.cases << " cases)\n";
    if (!p.passed) {
      all_passed = false;
      std::cout << "       first counterexample: " << p.counterexample << "\n";
    }
  }
  return all_passed ? kOk : kPropertyFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"entlab: sparse-attention laboratory for length generalization"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  app.fallthrough();  // global flags may follow the subcommand

  std::uint64_t seed = 0;
  std::size_t threads = 0;
  bool dry_run = false;
  app.add_option("--seed", seed, "root seed; all randomness derives from it");
  app.add_option("--threads", threads, "worker parallelism (env ENTLAB_THREADS as fallback)");
  app.add_flag("--dry-run", dry_run, "print the resolved config and exit");

  auto* gen = app.add_subcommand("gen-data", "generate a newline-delimited JSON dataset");
  std::string gen_task, gen_len = "32:64", gen_out = "dataset.ndjson";
  std::size_t gen_samples = 1000;
  bool gen_stream = false;
  gen->add_option("--task", gen_task, "task name")->required();
  gen->add_option("--len", gen_len, "length range LO:HI");
  gen->add_option("--samples", gen_samples, "number of samples");
  gen->add_option("--out", gen_out, "output path");
  gen->add_flag("--stream", gen_stream, "write samples to stdout instead of a file");

  auto* tr = app.add_subcommand("train", "train a model");
  std::string tr_config, tr_mech, tr_posenc, tr_out = ".";
  double tr_alpha = -1.0;
  tr->add_option("--config", tr_config, "TrainConfig JSON file");
  tr->add_option("--mech", tr_mech, "attention mechanism override");
  tr->add_option("--posenc", tr_posenc, "positional encoding override");
  tr->add_option("--alpha", tr_alpha, "entmax alpha override");
  tr->add_option("--out-dir", tr_out, "output directory");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint across lengths");
  std::string ev_ckpt, ev_lengths, ev_task, ev_out;
  std::size_t ev_samples = 1000;
  ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
  ev->add_option("--lengths", ev_lengths, "comma-separated lengths")->required();
  ev->add_option("--samples", ev_samples, "samples per length");
  ev->add_option("--task", ev_task, "task name (default copy)");
  ev->add_option("--out", ev_out, "output base path (.csv/.json appended)");

  auto* an = app.add_subcommand("analyze", "run an analysis experiment");
  std::string an_exp, an_alphas, an_lengths, an_mode = "counterexample", an_input,
                      an_out = ".";
  an->add_option("experiment", an_exp,
                 "collapse|oversquash|dispersion|centroid|flatness|scaling-fit")
      ->required();
  an->add_option("--alphas", an_alphas, "comma-separated alphas");
  an->add_option("--lengths", an_lengths, "length range LO:HI (doubling grid)");
  an->add_option("--mode", an_mode, "collapse prefix mode");
  an->add_option("--input", an_input, "input CSV for scaling-fit");
  an->add_option("--out-dir", an_out, "report output directory");

  auto* vf = app.add_subcommand("verify", "run the invariant property suites");
  std::string vf_suite = "all";
  vf->add_option("--suite", vf_suite, "transforms|gradients|tasks|all")
      ->check(CLI::IsMember({"transforms", "gradients", "tasks", "all"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (gen->parsed())
      return cmd_gen_data(gen_task, gen_len, gen_samples, seed, gen_out, gen_stream, dry_run);
    if (tr->parsed())
      return cmd_train(tr_config, tr_mech, tr_posenc, tr_alpha, app.count("--seed") > 0, seed,
                       tr_out, threads, dry_run);
    if (ev->parsed())
      return cmd_eval(ev_ckpt, ev_lengths, ev_samples, ev_task, ev_out, seed, threads, dry_run);
    if (an->parsed())
      return cmd_analyze(an_exp, an_alphas, an_lengths, an_mode, an_input, an_out, seed,
                         threads, dry_run);
    if (vf->parsed()) return cmd_verify(vf_suite, seed, dry_run);
  } catch (const entlab::ArtifactError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kArtifact;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kPropertyFailure;
  }
  return kUsage;
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "doctest.h"

namespace {

std::string binary() {
  const char* env = std::getenv("ENTLAB_BIN");
  REQUIRE(env != nullptr);
  return env;
}

int run(const std::string& args) {
  const std::string cmd = binary() + " " + args + " >/tmp/entlab_cli_out.txt 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("gen-data is deterministic and byte-identical across runs") {
  CHECK(run("gen-data --task copy --len 8:16 --samples 50 --seed 7 "
            "--out /tmp/entlab_ds1.ndjson") == 0);
  CHECK(run("gen-data --task copy --len 8:16 --samples 50 --seed 7 "
            "--out /tmp/entlab_ds2.ndjson") == 0);
  const std::string a = slurp("/tmp/entlab_ds1.ndjson");
  const std::string b = slurp("/tmp/entlab_ds2.ndjson");
  CHECK(!a.empty());
  CHECK(a == b);
  // 50 lines
  std::size_t lines = 0;
  for (char c : a) lines += c == '\n';
  CHECK(lines == 50);
  // manifest written alongside
  CHECK(!slurp("/tmp/entlab_ds1.ndjson.manifest.json").empty());
}

TEST_CASE("usage errors exit with code 2") {
  CHECK(run("gen-data --task mqmtar --len 8:8 --samples 1 --out /tmp/entlab_small.ndjson") == 2);
  CHECK(run("gen-data --task nosuchtask --out /tmp/entlab_x.ndjson") == 2);
  CHECK(run("analyze nosuchexperiment") == 2);
  CHECK(run("eval --lengths 8") == 2);  // missing required --ckpt
  CHECK(run("train --config /tmp/entlab_missing_config.json") == 2);
}

TEST_CASE("dry-run prints the resolved config and writes nothing") {
  std::remove("/tmp/entlab_dry.ndjson");
  CHECK(run("gen-data --task copy --len 4:8 --samples 5 --out /tmp/entlab_dry.ndjson "
            "--dry-run") == 0);
  const std::string out = slurp("/tmp/entlab_cli_out.txt");
  CHECK(out.find("\"subcommand\": \"gen-data\"") != std::string::npos);
  CHECK(out.find("version_hash") != std::string::npos);
  std::ifstream f("/tmp/entlab_dry.ndjson");
  CHECK(!f.good());
}

TEST_CASE("checkpoint problems exit with code 4") {
  CHECK(run("eval --ckpt /tmp/entlab_no_such.ckpt --lengths 8,16") == 4);
  {
    std::ofstream bad("/tmp/entlab_bad.ckpt", std::ios::binary);
    bad << "NOTMAGIC0000000000000000";
  }
  CHECK(run("eval --ckpt /tmp/entlab_bad.ckpt --lengths 8") == 4);
}

TEST_CASE("train, eval and verify round trip") {
  {
    std::ofstream cfg("/tmp/entlab_train_cfg.json");
    cfg << R"({
      "model": {"layers": 1, "heads": 2, "hidden": 16, "ffn_dim": 24, "vocab": 32,
                 "mechanism": "entmax", "alpha": 1.5, "positional": "nape", "seed": 3},
      "task": {"task": "copy", "len_lo": 4, "len_hi": 8},
      "batch_size": 8, "total_steps": 40, "peak_lr": 0.003,
      "eval_lengths": [8, 16], "selection_samples": 4, "eval_every": 20,
      "threads": 2, "seed": 3
    })";
  }
  CHECK(run("train --config /tmp/entlab_train_cfg.json --out-dir /tmp") == 0);
  CHECK(!slurp("/tmp/best.ckpt").empty());
  CHECK(!slurp("/tmp/train_log.csv").empty());
  CHECK(slurp("/tmp/train_log.csv").find("step,loss,lr,metric") == 0);

  CHECK(run("eval --ckpt /tmp/best.ckpt --lengths 8,16 --samples 8 --task copy "
            "--out /tmp/entlab_eval") == 0);
  const std::string csv = slurp("/tmp/entlab_eval.csv");
  CHECK(csv.find("mechanism,posenc,task,length,samples,metric,accuracy") == 0);
  CHECK(csv.find("entmax,nape,copy,8,8,exact_match,") != std::string::npos);

  // mechanism override through the CLI trains the headline configuration
  CHECK(run("train --config /tmp/entlab_train_cfg.json --mech asentmax --posenc nape "
            "--out-dir /tmp --dry-run") == 0);
  const std::string dry = slurp("/tmp/entlab_cli_out.txt");
  CHECK(dry.find("asentmax") != std::string::npos);
}

TEST_CASE("verify tasks suite passes and reports counts") {
  CHECK(run("verify --suite tasks --seed 5") == 0);
  const std::string out = slurp("/tmp/entlab_cli_out.txt");
  CHECK(out.find("[PASS] oracle_agreement_copy") != std::string::npos);
  CHECK(out.find("cases)") != std::string::npos);
}

TEST_CASE("analyze scaling-fit consumes a csv") {
  {
    std::ofstream f("/tmp/entlab_scales.csv");
    f << "position,scale\n";
    for (std::size_t n = 2; n <= 256; n *= 2)
      f << n << "," << 1.0 + 2.0 * std::pow(std::log(static_cast<double>(n)), 0.7) << "\n";
  }
  CHECK(run("analyze scaling-fit --input /tmp/entlab_scales.csv --out-dir /tmp") == 0);
  const std::string csv = slurp("/tmp/scaling_fit_0.csv");
  CHECK(csv.find("log_power") != std::string::npos);
}

TEST_CASE("analyze collapse writes the report with the 0.354 cell") {
  CHECK(run("analyze collapse --alphas 1.0,2.0 --lengths 128:1024 --out-dir /tmp --seed 1") ==
        0);
  const std::string csv = slurp("/tmp/collapse_1.csv");
  CHECK(csv.find("mode,alpha,n,layers,difference,seed") == 0);
  CHECK(csv.find("counterexample,2,") != std::string::npos);
  const std::string summary = slurp("/tmp/collapse_1_summary.json");
  CHECK(summary.find("counterexample_limit_0.3536") != std::string::npos);
}

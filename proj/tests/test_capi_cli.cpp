// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "qcomm/qcomm.h"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
};

Run run_cli(const std::string& args, const std::string& env = "") {
  const fs::path log = fs::temp_directory_path() / "qcomm_cli_test.log";
  const std::string cmd = env + " " + QCOMM_CLI_PATH + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::ostringstream s;
  s << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, s.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("qcomm_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write_config(const fs::path& dir, const std::string& body) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << body;
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

const char* kQtConfig = R"({
  "schema_version": 1, "name": "cli-qt",
  "channel": {"mode": "quantized", "alphabet_size": 10, "word_length": 16},
  "trainer": {"epochs": 3, "learning_rate": 0.001},
  "seeds": [1, 2]
})";

const char* kCnConfig = R"({
  "schema_version": 1, "name": "cli-cn",
  "channel": {"mode": "continuous", "word_length": 16},
  "trainer": {"epochs": 2, "learning_rate": 0.001},
  "seeds": [1]
})";

}  // namespace

TEST_CASE("C API: status codes and last error") {
  qc_config* cfg = nullptr;
  CHECK(qc_config_load("/nonexistent/x.json", &cfg) == QC_ERR_CONFIG);
  CHECK(cfg == nullptr);
  CHECK(std::string(qc_last_error()).find("/nonexistent/x.json") != std::string::npos);
  CHECK(qc_config_from_json("{\"bogus\": 1}", &cfg) == QC_ERR_CONFIG);
  CHECK(qc_config_from_json("{not json", &cfg) == QC_ERR_CONFIG);
  CHECK(qc_config_load(nullptr, &cfg) == QC_ERR_INVALID_ARGUMENT);
  REQUIRE(qc_config_from_json("{}", &cfg) == QC_OK);
  CHECK(std::string(qc_last_error()).empty());
  const uint64_t seeds[] = {9};
  CHECK(qc_config_set_seeds(cfg, seeds, 1) == QC_OK);
  const size_t bad[] = {0};
  CHECK(qc_config_set_candidates(cfg, bad, 1) == QC_ERR_CONFIG);
  char* text = nullptr;
  REQUIRE(qc_config_to_json(cfg, &text) == QC_OK);
  CHECK(std::string(text).find("\"seeds\"") != std::string::npos);
  qc_string_free(text);
  qc_config_free(cfg);
  CHECK(std::string(qc_version()).size() > 0);
  CHECK(std::string(qc_status_name(QC_ERR_NUMERIC)) == "numeric error");
}

TEST_CASE("C API: quantize and capacity") {
  const double x[] = {0.0, 0.25, 0.5, 1.0};
  int32_t sym[4];
  double deq[4];
  REQUIRE(qc_quantize(x, 4, 5, QC_SCHEME_LEVELS, sym, deq) == QC_OK);
  CHECK(sym[1] == 1);
  CHECK(sym[3] == 4);
  CHECK(deq[2] == 0.5);
  const double out_of_range[] = {1.5};
  CHECK(qc_quantize(out_of_range, 1, 5, QC_SCHEME_LEVELS, sym, deq) == QC_ERR_CONTRACT);
  CHECK(qc_quantize(x, 4, 1, QC_SCHEME_LEVELS, sym, deq) == QC_ERR_CONFIG);
  char* cap = nullptr;
  REQUIRE(qc_capacity(10, 6, 1, &cap) == QC_OK);
  CHECK(std::string(cap) == "1000000");
  qc_string_free(cap);
  REQUIRE(qc_capacity(10, 100, 1, &cap) == QC_OK);
  CHECK(std::string(cap) == "10^100");
  qc_string_free(cap);
}

TEST_CASE("cli: missing config exits 2 naming the path") {
  const Run r = run_cli("train --config /nonexistent/cfg.json --quiet");
  CHECK(r.code == 2);
  CHECK(r.out.find("/nonexistent/cfg.json") != std::string::npos);
  CHECK(run_cli("train").code == 2);
  CHECK(run_cli("frobnicate").code == 2);
}

TEST_CASE("cli: train, seed override, eval, output root precedence") {
  const fs::path dir = scratch("train");
  const fs::path cfg = write_config(dir, kQtConfig);
  const fs::path out = dir / "out";
  Run r = run_cli("train --config " + cfg.string() + " --seed 7 --out " + out.string() + " --quiet");
  REQUIRE(r.code == 0);
  CHECK(fs::exists(out / "cli-qt/report.json"));
  CHECK(fs::exists(out / "cli-qt/seed-7/checkpoint.qckpt"));
  CHECK(!fs::exists(out / "cli-qt/seed-1"));
  const std::string report = slurp(out / "cli-qt/report.json");
  CHECK(report.find("\"kind\": \"qcomm-report\"") != std::string::npos);

  // Environment variable sets the root when --out is absent; --out wins when both are given.
  const fs::path env_root = dir / "env";
  r = run_cli("train --config " + cfg.string() + " --seed 7 --quiet", "QCOMM_OUT_DIR=" + env_root.string());
  REQUIRE(r.code == 0);
  CHECK(fs::exists(env_root / "cli-qt/report.json"));
  CHECK(slurp(env_root / "cli-qt/report.json") == report);

  // Evaluating the checkpoint reproduces the training report's test accuracies.
  r = run_cli("eval " + (out / "cli-qt/seed-7/checkpoint.qckpt").string() + " --config " + cfg.string() + " --out " +
              out.string());
  REQUIRE(r.code == 0);
  const auto results = slurp(out / "cli-qt/results.csv");
  const auto evalcsv = slurp(out / "cli-qt/eval-seed-7.csv");
  CHECK(results == evalcsv);

  r = run_cli("eval " + (out / "cli-qt/seed-7/checkpoint.qckpt").string() + " --config " + cfg.string() + " --out " +
              out.string() + " --candidates 2,10");
  REQUIRE(r.code == 0);
  std::size_t rows = 0;
  std::istringstream lines(r.out);
  for (std::string line; std::getline(lines, line);) {
    std::istringstream f(line);
    std::size_t n = 0;
    if (f >> n) ++rows;
  }
  CHECK(rows == 2);
  fs::remove_all(dir);
}

TEST_CASE("cli: eval mismatch exits 2; continuous NoUM shows n/a") {
  const fs::path dir = scratch("eval");
  const fs::path cfg = write_config(dir, kCnConfig);
  const fs::path out = dir / "out";
  REQUIRE(run_cli("train --config " + cfg.string() + " --out " + out.string() + " --quiet").code == 0);
  const fs::path ckpt = out / "cli-cn/seed-1/checkpoint.qckpt";
  Run r = run_cli("eval " + ckpt.string() + " --config " + cfg.string() + " --out " + out.string());
  REQUIRE(r.code == 0);
  CHECK(r.out.find("n/a") != std::string::npos);

  const fs::path qt = dir / "qt";
  fs::create_directories(qt);
  const fs::path qcfg = write_config(qt, kQtConfig);
  r = run_cli("eval " + ckpt.string() + " --config " + qcfg.string() + " --out " + out.string());
  CHECK(r.code == 2);
  CHECK(r.out.find("channel.mode") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("cli: report and sweep") {
  const fs::path dir = scratch("report");
  CHECK(run_cli("report " + dir.string()).code == 2);
  const fs::path cfg = write_config(dir, kCnConfig);
  REQUIRE(run_cli("train --config " + cfg.string() + " --out " + (dir / "runs").string() + " --quiet").code == 0);
  REQUIRE(run_cli("report " + (dir / "runs").string()).code == 0);
  const std::string first = slurp(dir / "runs/comparison.csv");
  REQUIRE(run_cli("report " + (dir / "runs").string()).code == 0);
  CHECK(slurp(dir / "runs/comparison.csv") == first);

  const fs::path sweep_dir = dir / "sweep";
  fs::create_directories(sweep_dir);
  const fs::path scfg = write_config(sweep_dir, R"({
    "name": "cli-sweep",
    "channel": {"mode": "quantized"},
    "trainer": {"epochs": 2, "learning_rate": 0.001},
    "seeds": [1],
    "sweep": {"alphabet_sizes": [1, 2], "word_lengths": [4], "regimes": ["infer_only"]}
  })");
  const Run r = run_cli("sweep --config " + scfg.string() + " --out " + (sweep_dir / "out").string() + " --jobs 2");
  CHECK(r.code == 0);
  const std::string table = slurp(sweep_dir / "out/cli-sweep/sweep.csv");
  CHECK(table.find("alphabet_size") != std::string::npos);
  fs::remove_all(dir);
}

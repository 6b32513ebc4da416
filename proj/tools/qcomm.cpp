// SPDX-License-Identifier: Apache-2.0
// qcomm: command-line front end over the C API.
#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <malloc.h>
#include <optional>
#include <string>
#include <vector>

#include "qcomm/qcomm.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct Options {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::vector<std::size_t> candidates;
  std::size_t jobs = 0;
  std::string out;
  bool full_scale = false;
  bool quiet = false;
  std::string checkpoint;
  std::string csv;
  std::string dir;
};

int exit_code(qc_status s) {
  switch (s) {
    case QC_OK: return kExitOk;
    case QC_ERR_CONFIG: return kExitConfig;
    case QC_ERR_NUMERIC: return kExitNumeric;
    default: return kExitFailure;
  }
}

int report_error(qc_status s) {
  std::fprintf(stderr, "qcomm: %s: %s\n", qc_status_name(s), qc_last_error());
  return exit_code(s);
}

std::string take_string(char* s) {
  std::string out = s ? s : "";
  qc_string_free(s);
  return out;
}

void print_progress(const char* line, void*) { std::fprintf(stderr, "%s\n", line); }

// Output root precedence: --out, then QCOMM_OUT_DIR, then the config file.
std::optional<std::string> output_root(const Options& o) {
  if (!o.out.empty()) return o.out;
  if (const char* env = std::getenv("QCOMM_OUT_DIR"); env && *env) return std::string(env);
  return std::nullopt;
}

struct ConfigHandle {
  qc_config* ptr = nullptr;
  ~ConfigHandle() { qc_config_free(ptr); }
};

struct ResultHandle {
  qc_result* ptr = nullptr;
  ~ResultHandle() { qc_result_free(ptr); }
};

qc_status load(const Options& o, ConfigHandle& cfg) {
  qc_status s = qc_config_load(o.config.c_str(), &cfg.ptr);
  if (s != QC_OK) return s;
  if (o.full_scale && (s = qc_config_set_full_scale(cfg.ptr)) != QC_OK) return s;
  if (!o.seeds.empty() && (s = qc_config_set_seeds(cfg.ptr, o.seeds.data(), o.seeds.size())) != QC_OK) return s;
  if (!o.candidates.empty() &&
      (s = qc_config_set_candidates(cfg.ptr, o.candidates.data(), o.candidates.size())) != QC_OK)
    return s;
  if (auto root = output_root(o); root && (s = qc_config_set_output_dir(cfg.ptr, root->c_str())) != QC_OK) return s;
  if (o.jobs > 0 && (s = qc_config_set_eval_jobs(cfg.ptr, o.jobs)) != QC_OK) return s;
  return QC_OK;
}

std::string fmt(double v) {
  if (std::isnan(v)) return "failed";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void print_table(const qc_result* r, bool with_std) {
  double noum = 0.0;
  const bool has_noum = qc_result_noum(r, &noum) != 0;
  char noum_text[32] = "n/a";
  if (has_noum) std::snprintf(noum_text, sizeof noum_text, "%.6g", noum);
  if (with_std) {
    std::printf("%8s  %10s  %8s  %8s\n", "n", "accuracy", "std", "noum");
  } else {
    std::printf("%8s  %10s  %8s\n", "n", "accuracy", "noum");
  }
  for (std::size_t i = 0; i < qc_result_rows(r); ++i) {
    std::size_t n = 0;
    double acc = 0.0, sd = 0.0;
    qc_result_row(r, i, &n, &acc, &sd);
    if (with_std) {
      std::printf("%8zu  %10s  %8s  %8s\n", n, fmt(acc).c_str(), fmt(sd).c_str(), noum_text);
    } else {
      std::printf("%8zu  %10s  %8s\n", n, fmt(acc).c_str(), noum_text);
    }
  }
}

int cmd_train(const Options& o) {
  ConfigHandle cfg;
  if (qc_status s = load(o, cfg); s != QC_OK) return report_error(s);
  ResultHandle result;
  const qc_status s = qc_train(cfg.ptr, &result.ptr);
  if (s != QC_OK) return report_error(s);
  print_table(result.ptr, true);
  char* root = nullptr;
  if (qc_config_output_dir(cfg.ptr, &root) == QC_OK) std::printf("outputs: %s\n", take_string(root).c_str());
  return kExitOk;
}

int cmd_eval(const Options& o) {
  ConfigHandle cfg;
  if (qc_status s = load(o, cfg); s != QC_OK) return report_error(s);
  char* root_c = nullptr;
  if (qc_status s = qc_config_output_dir(cfg.ptr, &root_c); s != QC_OK) return report_error(s);
  const std::filesystem::path root = take_string(root_c);
  std::filesystem::path csv = o.csv;
  if (csv.empty()) {
    const std::filesystem::path ckpt(o.checkpoint);
    std::string tag = ckpt.parent_path().filename().string();
    if (tag.empty() || tag == ".") tag = ckpt.stem().string();
    csv = root / ("eval-" + tag + ".csv");
  } else if (csv.is_relative()) {
    csv = root / csv;
  }
  std::error_code ec;
  std::filesystem::create_directories(csv.parent_path(), ec);
  if (ec) {
    std::fprintf(stderr, "qcomm: cannot create %s: %s\n", csv.parent_path().c_str(), ec.message().c_str());
    return kExitFailure;
  }
  ResultHandle result;
  const qc_status s = qc_evaluate_checkpoint(cfg.ptr, o.checkpoint.c_str(), o.candidates.data(), o.candidates.size(),
                                             csv.c_str(), &result.ptr);
  if (s != QC_OK) return report_error(s);
  print_table(result.ptr, false);
  std::printf("csv: %s\n", csv.c_str());
  return kExitOk;
}

int cmd_sweep(const Options& o) {
  ConfigHandle cfg;
  if (qc_status s = load(o, cfg); s != QC_OK) return report_error(s);
  ResultHandle result;
  const qc_status s = qc_sweep(cfg.ptr, o.jobs == 0 ? 1 : o.jobs, &result.ptr);
  if (s != QC_OK) return report_error(s);
  char* root = nullptr;
  if (qc_config_output_dir(cfg.ptr, &root) == QC_OK) std::printf("outputs: %s\n", take_string(root).c_str());
  return kExitOk;
}

int cmd_report(const Options& o) {
  char* path = nullptr;
  const qc_status s = qc_report(o.dir.c_str(), &path);
  if (s != QC_OK) return report_error(s);
  std::printf("%s\n", take_string(path).c_str());
  return kExitOk;
}

void add_run_options(CLI::App* cmd, Options& o, bool seeds) {
  cmd->add_option("--config", o.config, "Experiment config (JSON)")->required();
  if (seeds) cmd->add_option("--seed", o.seeds, "Seed list overriding the config")->delimiter(',');
  cmd->add_option("--out", o.out, "Output root (overrides QCOMM_OUT_DIR and the config)");
  cmd->add_option("--jobs", o.jobs, "Worker threads")->check(CLI::PositiveNumber);
  cmd->add_flag("--full-scale", o.full_scale, "Use the 4 x 10 world (10^4 objects)");
  cmd->add_flag("--quiet", o.quiet, "No progress lines on stderr");
}

}  // namespace

int main(int argc, char** argv) {
  // large activation buffers stay in the heap between steps
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  CLI::App app{"qcomm: emergent-communication games with quantized messages"};
  app.set_version_flag("--version", std::string(qc_version()));
  app.require_subcommand(1);
  Options o;

  auto* train = app.add_subcommand("train", "Train and evaluate every seed of a config");
  add_run_options(train, o, true);
  train->add_option("--candidates", o.candidates, "Candidate counts to evaluate")->delimiter(',');

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test targets");
  eval->add_option("checkpoint", o.checkpoint, "Checkpoint file")->required();
  add_run_options(eval, o, false);
  eval->add_option("--candidates", o.candidates, "Candidate counts to evaluate")->delimiter(',');
  eval->add_option("--csv", o.csv, "CSV path (relative paths resolve under the run directory)");

  auto* sweep = app.add_subcommand("sweep", "Alphabet size x word length sweep");
  add_run_options(sweep, o, true);

  auto* report = app.add_subcommand("report", "Write comparison.csv over every run below a directory");
  report->add_option("dir", o.dir, "Directory holding run outputs")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  if (!o.quiet) qc_set_progress(print_progress, nullptr);
  if (*train) return cmd_train(o);
  if (*eval) return cmd_eval(o);
  if (*sweep) return cmd_sweep(o);
  return cmd_report(o);
}

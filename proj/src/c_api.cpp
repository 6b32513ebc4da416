// SPDX-License-Identifier: Apache-2.0
#include "qcomm/qcomm.h"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <limits>
#include <mutex>
#include <new>
#include <string>

#include "qcomm/errors.hpp"
#include "qcomm/experiment.hpp"

struct qc_config {
  qcomm::ExperimentConfig config;
};

struct qc_result {
  nlohmann::json doc;
  struct Row {
    std::size_t n;
    double accuracy;
    double std;
  };
  std::vector<Row> rows;
  std::optional<double> noum;
};

namespace {

thread_local std::string g_last_error;

std::mutex g_progress_mutex;
qc_progress_fn g_progress = nullptr;
void* g_progress_user = nullptr;

qc_status fail(qc_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

template <typename Fn>
qc_status guarded(Fn&& fn) {
  try {
    g_last_error.clear();
    fn();
    return QC_OK;
  } catch (const qcomm::ConfigError& e) {
    return fail(QC_ERR_CONFIG, e.what());
  } catch (const qcomm::NumericError& e) {
    return fail(QC_ERR_NUMERIC, e.what());
  } catch (const qcomm::IoError& e) {
    return fail(QC_ERR_IO, e.what());
  } catch (const qcomm::DimensionError& e) {
    return fail(QC_ERR_DIMENSION, e.what());
  } catch (const qcomm::ContractError& e) {
    return fail(QC_ERR_CONTRACT, e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(QC_ERR_CONFIG, e.what());
  } catch (const std::bad_alloc&) {
    return fail(QC_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(QC_ERR_INTERNAL, e.what());
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

qcomm::ProgressFn progress_callback() {
  std::lock_guard lock(g_progress_mutex);
  if (!g_progress) return {};
  qc_progress_fn fn = g_progress;
  void* user = g_progress_user;
  return [fn, user](const std::string& line) { fn(line.c_str(), user); };
}

#define QC_REQUIRE(cond, what) \
  if (!(cond)) return fail(QC_ERR_INVALID_ARGUMENT, what)

}  // namespace

extern "C" {

const char* qc_version(void) { return qcomm::library_version().data(); }

const char* qc_last_error(void) { return g_last_error.c_str(); }

const char* qc_status_name(qc_status status) {
  switch (status) {
    case QC_OK: return "ok";
    case QC_ERR_INTERNAL: return "internal error";
    case QC_ERR_CONFIG: return "config error";
    case QC_ERR_NUMERIC: return "numeric error";
    case QC_ERR_IO: return "io error";
    case QC_ERR_DIMENSION: return "dimension error";
    case QC_ERR_CONTRACT: return "contract violation";
    case QC_ERR_INVALID_ARGUMENT: return "invalid argument";
  }
  return "unknown status";
}

void qc_string_free(char* s) { std::free(s); }

qc_status qc_config_load(const char* path, qc_config** out) {
  QC_REQUIRE(path && out, "qc_config_load: null argument");
  *out = nullptr;
  return guarded([&] { *out = new qc_config{qcomm::load_config(path)}; });
}

qc_status qc_config_from_json(const char* json_text, qc_config** out) {
  QC_REQUIRE(json_text && out, "qc_config_from_json: null argument");
  *out = nullptr;
  return guarded([&] {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
      throw qcomm::ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    *out = new qc_config{qcomm::config_from_json(doc)};
  });
}

void qc_config_free(qc_config* config) { delete config; }

qc_status qc_config_set_seeds(qc_config* config, const uint64_t* seeds, size_t count) {
  QC_REQUIRE(config && seeds && count > 0, "qc_config_set_seeds: need a config and at least one seed");
  return guarded([&] {
    qcomm::ExperimentConfig c = config->config;
    c.seeds.assign(seeds, seeds + count);
    config->config = qcomm::resolve(std::move(c));
  });
}

qc_status qc_config_set_output_dir(qc_config* config, const char* dir) {
  QC_REQUIRE(config && dir && *dir, "qc_config_set_output_dir: need a config and a directory");
  config->config.output_dir = dir;
  g_last_error.clear();
  return QC_OK;
}

qc_status qc_config_set_eval_jobs(qc_config* config, size_t jobs) {
  QC_REQUIRE(config && jobs > 0, "qc_config_set_eval_jobs: jobs must be positive");
  config->config.eval_jobs = jobs;
  g_last_error.clear();
  return QC_OK;
}

qc_status qc_config_set_candidates(qc_config* config, const size_t* counts, size_t count) {
  QC_REQUIRE(config && counts && count > 0, "qc_config_set_candidates: need at least one count");
  return guarded([&] {
    qcomm::ExperimentConfig c = config->config;
    c.eval_candidates.assign(counts, counts + count);
    config->config = qcomm::resolve(std::move(c));
  });
}

qc_status qc_config_set_full_scale(qc_config* config) {
  QC_REQUIRE(config, "qc_config_set_full_scale: null config");
  return guarded([&] {
    qcomm::ExperimentConfig c = config->config;
    qcomm::apply_full_scale(c);
    config->config = qcomm::resolve(std::move(c));
  });
}

qc_status qc_config_output_dir(const qc_config* config, char** out) {
  QC_REQUIRE(config && out, "qc_config_output_dir: null argument");
  return guarded([&] { *out = dup_string(qcomm::run_paths(config->config).root.string()); });
}

qc_status qc_config_to_json(const qc_config* config, char** out) {
  QC_REQUIRE(config && out, "qc_config_to_json: null argument");
  return guarded([&] { *out = dup_string(qcomm::config_to_json(config->config).dump(2)); });
}

void qc_set_progress(qc_progress_fn fn, void* user) {
  std::lock_guard lock(g_progress_mutex);
  g_progress = fn;
  g_progress_user = user;
}

qc_status qc_train(const qc_config* config, qc_result** out) {
  QC_REQUIRE(config && out, "qc_train: null argument");
  *out = nullptr;
  return guarded([&] {
    const qcomm::MetricsReport report = qcomm::replicate(config->config, true, progress_callback());
    auto* r = new qc_result;
    r->doc = qcomm::report_to_json(report);
    for (const auto& a : report.accuracy) r->rows.push_back({a.n, a.mean, a.std});
    r->noum = report.noum_mean;
    *out = r;
  });
}

qc_status qc_evaluate_checkpoint(const qc_config* config, const char* checkpoint, const size_t* counts, size_t count,
                                 const char* csv_path, qc_result** out) {
  QC_REQUIRE(config && checkpoint && out, "qc_evaluate_checkpoint: null argument");
  QC_REQUIRE(counts || count == 0, "qc_evaluate_checkpoint: counts is null");
  *out = nullptr;
  return guarded([&] {
    std::span<const std::size_t> list(counts, count);
    const qcomm::SeedReport seed = qcomm::evaluate_checkpoint(config->config, checkpoint, list);
    qcomm::MetricsReport single;
    single.config = config->config;
    single.seeds.push_back(seed);
    if (csv_path) qcomm::save_csv(csv_path, qcomm::long_table(single));
    auto* r = new qc_result;
    r->doc = {{"kind", "qcomm-eval"}, {"checkpoint", checkpoint}, {"seed", seed.seed}};
    r->doc["test"] = nlohmann::json::parse(qcomm::report_to_json(single).at("seeds").at(0).at("test").dump());
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (const auto& p : seed.test.points) r->rows.push_back({p.n, p.accuracy.value_or(nan), p.accuracy ? 0.0 : nan});
    if (seed.test.noum) r->noum = static_cast<double>(*seed.test.noum);
    *out = r;
  });
}

qc_status qc_sweep(const qc_config* config, size_t jobs, qc_result** out) {
  QC_REQUIRE(config && out, "qc_sweep: null argument");
  *out = nullptr;
  return guarded([&] {
    const qcomm::SweepGrid grid = qcomm::run_sweep(config->config, jobs == 0 ? 1 : jobs, true, progress_callback());
    auto* r = new qc_result;
    nlohmann::json cells = nlohmann::json::array();
    std::size_t failed = 0;
    for (const auto& c : grid.cells) {
      nlohmann::json j{{"alphabet", c.alphabet},
                       {"word_length", c.word_length},
                       {"regime", qcomm::to_string(c.regime)},
                       {"seed", c.seed},
                       {"ok", c.ok}};
      j["accuracy"] = c.accuracy ? nlohmann::json(*c.accuracy) : nlohmann::json(nullptr);
      j["noum"] = c.noum ? nlohmann::json(*c.noum) : nlohmann::json(nullptr);
      if (!c.ok) {
        j["error"] = c.error;
        ++failed;
      }
      cells.push_back(std::move(j));
    }
    r->doc = {{"kind", "qcomm-sweep"},
              {"output", qcomm::run_paths(config->config).root.string()},
              {"cells", cells},
              {"failed", failed}};
    *out = r;
  });
}

qc_status qc_report(const char* dir, char** out_path) {
  QC_REQUIRE(dir && out_path, "qc_report: null argument");
  *out_path = nullptr;
  return guarded([&] { *out_path = dup_string(qcomm::write_comparison(dir).string()); });
}

void qc_result_free(qc_result* result) { delete result; }

qc_status qc_result_json(const qc_result* result, char** out) {
  QC_REQUIRE(result && out, "qc_result_json: null argument");
  return guarded([&] { *out = dup_string(result->doc.dump(2)); });
}

size_t qc_result_rows(const qc_result* result) { return result ? result->rows.size() : 0; }

qc_status qc_result_row(const qc_result* result, size_t row, size_t* n, double* accuracy, double* std) {
  QC_REQUIRE(result && row < result->rows.size(), "qc_result_row: row out of range");
  const auto& r = result->rows[row];
  if (n) *n = r.n;
  if (accuracy) *accuracy = r.accuracy;
  if (std) *std = r.std;
  g_last_error.clear();
  return QC_OK;
}

int qc_result_noum(const qc_result* result, double* noum) {
  if (!result || !result->noum) return 0;
  if (noum) *noum = *result->noum;
  return 1;
}

qc_status qc_quantize(const double* values, size_t len, size_t alphabet, qc_quantizer_scheme scheme, int32_t* symbols,
                      double* dequantized) {
  QC_REQUIRE(values || len == 0, "qc_quantize: null values");
  return guarded([&] {
    qcomm::ChannelSpec spec;
    spec.mode = qcomm::Mode::quantized;
    spec.alphabet_size = alphabet;
    spec.word_length = len == 0 ? 1 : len;
    spec.scheme = scheme == QC_SCHEME_EXTENDED ? qcomm::QuantizerScheme::extended : qcomm::QuantizerScheme::levels;
    spec.validate();
    if (len == 0) return;
    const qcomm::Tensor x({1, len}, std::vector<double>(values, values + len));
    const qcomm::QuantizedWords q = qcomm::quantize_words(x, spec);
    if (symbols) std::copy(q.symbols.begin(), q.symbols.end(), symbols);
    if (dequantized) std::copy(q.dequantized.data().begin(), q.dequantized.data().end(), dequantized);
  });
}

qc_status qc_capacity(size_t alphabet, size_t word_length, size_t message_length, char** out) {
  QC_REQUIRE(out, "qc_capacity: null argument");
  return guarded([&] {
    qcomm::ChannelSpec spec;
    spec.mode = qcomm::Mode::quantized;
    spec.alphabet_size = alphabet;
    spec.word_length = word_length;
    spec.message_length = message_length;
    spec.architecture = message_length > 1 ? qcomm::Architecture::recurrent : qcomm::Architecture::instant;
    spec.validate();
    *out = dup_string(qcomm::message_capacity(spec).to_string());
  });
}

}  // extern "C"

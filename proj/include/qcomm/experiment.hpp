// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qcomm/agents.hpp"
#include "qcomm/config.hpp"
#include "qcomm/csv.hpp"

namespace qcomm {

std::string_view library_version();

/// World, split and candidate pool for one seed.
struct GameData {
  ExperimentConfig config;
  ObjectWorld world;
  Split split;
  std::optional<ClassMap> classes;
  Tensor sender_features;  // [objects x feature_dim]
  Tensor receiver_pool;    // [pool x receiver_input]
  std::vector<std::size_t> answer;  // object -> pool index the receiver must pick

  std::size_t pool_size() const { return receiver_pool.rows(); }
  AgentShape agent_shape() const;
};

/// The split is drawn from the seed's "data-split" stream; seeded_random class
/// maps from its "class-map" stream.
GameData make_game(const ExperimentConfig& config, std::uint64_t seed);

/// Episode for `object`: candidates are pool indices, one of them answer[object].
Episode game_episode(const GameData& data, std::size_t object, std::size_t n, Rng& rng);

AgentPair make_agents(const GameData& data, std::uint64_t seed);

struct AccuracyPoint {
  std::size_t n = 0;
  std::optional<double> accuracy;  // absent when `error` is set
  std::size_t correct = 0;
  std::size_t episodes = 0;
  std::string error;
};

struct EvalResult {
  std::vector<AccuracyPoint> points;
  std::optional<std::size_t> noum;  // discrete modes only
  std::size_t targets = 0;
};

/// Inference-mode outputs for a list of sender targets.
struct InferenceBatch {
  Tensor receiver_state;  // [targets x hidden]
  Tensor encoded_pool;    // [pool x hidden]
  std::optional<std::vector<std::vector<std::int32_t>>> messages;
};

InferenceBatch infer(const AgentPair& agents, const GameData& data, std::span<const std::size_t> objects);

/// Fraction of `episodes` where the receiver's argmax is the target position.
std::size_t count_correct(const InferenceBatch& inference, std::span<const Episode> episodes, std::size_t jobs);

/// One episode per target of `phase` for every n; episodes come from
/// Rng(seed, stream).split(n). Counts above the pool are recorded as errors.
EvalResult evaluate(const AgentPair& agents, const GameData& data, Phase phase, std::span<const std::size_t> counts,
                    std::uint64_t seed, std::size_t jobs, std::string_view stream = "eval");

/// Distinct inference messages over the test targets; nullopt for continuous mode.
std::optional<std::size_t> noum(const AgentPair& agents, const GameData& data);
std::size_t count_unique(const std::vector<std::vector<std::int32_t>>& messages);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // NaN for epoch 0
  double valid_accuracy = 0.0;
};

struct SeedReport {
  std::uint64_t seed = 0;
  bool ok = true;
  std::string error;
  std::size_t best_epoch = 0;
  double best_valid_accuracy = 0.0;
  std::size_t epochs_run = 0;
  std::vector<EpochRecord> curve;
  EvalResult test;
};

struct TrainResult {
  AgentPair agents;
  SeedReport report;
};

/// Trains one seed. Returns the parameters of the best validation epoch.
TrainResult train(const GameData& data, std::uint64_t seed);

struct AggregateRow {
  std::size_t n = 0;
  double mean = 0.0;
  double std = 0.0;  // population std over seeds
  std::size_t seeds = 0;
};

struct MetricsReport {
  ExperimentConfig config;
  std::vector<SeedReport> seeds;  // sorted by seed
  std::vector<AggregateRow> accuracy;
  std::optional<double> noum_mean;
  std::optional<double> noum_std;
  bool partial = false;
};

/// Aggregates per-seed results; independent of the order of `seeds`.
MetricsReport aggregate(const ExperimentConfig& config, std::vector<SeedReport> seeds);

nlohmann::json report_to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& doc);

/// Long-format rows: game, mode, architecture, alphabet, word_length,
/// message_length, regime, seed, n, accuracy, noum, best_epoch.
CsvTable long_table(const MetricsReport& report);
const std::vector<std::string>& long_table_header();

struct RunPaths {
  std::filesystem::path root;  // <output_dir>/<name>
  std::filesystem::path seed_dir(std::uint64_t seed) const;
  std::filesystem::path checkpoint(std::uint64_t seed) const;
  std::filesystem::path report() const { return root / "report.json"; }
  std::filesystem::path results() const { return root / "results.csv"; }
  std::filesystem::path manifest() const { return root / "manifest.json"; }
};

RunPaths run_paths(const ExperimentConfig& config);

using ProgressFn = std::function<void(const std::string&)>;

/// Trains and evaluates every configured seed. When `write` is set the run
/// directory receives checkpoints, per-seed reports, the aggregate report,
/// the long CSV and a manifest.
MetricsReport replicate(const ExperimentConfig& config, bool write = true, const ProgressFn& progress = {});

/// Evaluates a saved checkpoint. The split is rebuilt from the seed stored in
/// the checkpoint. Mismatched tensors raise ConfigError.
SeedReport evaluate_checkpoint(const ExperimentConfig& config, const std::filesystem::path& checkpoint,
                               std::span<const std::size_t> counts);

struct SweepCell {
  std::size_t alphabet = 0;
  std::size_t word_length = 0;
  QuantizeRegime regime = QuantizeRegime::infer_only;
  std::uint64_t seed = 0;
  bool ok = true;
  std::string error;
  std::optional<double> accuracy;  // at heatmap_candidates
  std::optional<std::size_t> noum;
  std::size_t best_epoch = 0;
  SeedReport report;
};

struct SweepGrid {
  ExperimentConfig config;
  std::vector<SweepCell> cells;  // regime-major, then alphabet, word length, seed
};

/// Config of one sweep cell (hidden size re-derived for the cell's word length).
ExperimentConfig sweep_cell_config(const ExperimentConfig& base, std::size_t alphabet, std::size_t word_length,
                                   QuantizeRegime regime);

/// Runs every cell on up to `jobs` threads; failing cells are recorded, not thrown.
SweepGrid run_sweep(const ExperimentConfig& config, std::size_t jobs, bool write = true,
                    const ProgressFn& progress = {});

/// Mean over seeds of `accuracy` (or `noum`) per (alphabet, word length) for one regime.
/// Missing cells are NaN.
std::vector<std::vector<double>> heatmap(const SweepGrid& grid, QuantizeRegime regime, bool noum_values);
CsvTable heatmap_table(const SweepGrid& grid, QuantizeRegime regime, bool noum_values);

/// Collects every run report below `dir` into comparison.csv (written in
/// `dir`). Throws ConfigError when no report is found.
std::filesystem::path write_comparison(const std::filesystem::path& dir);
CsvTable comparison_table(const std::vector<MetricsReport>& reports);

}  // namespace qcomm

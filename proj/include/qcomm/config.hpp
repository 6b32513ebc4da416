// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "qcomm/channel.hpp"
#include "qcomm/world.hpp"

namespace qcomm {

inline constexpr int kConfigSchemaVersion = 1;

enum class GameKind { object_referential, object_classification };
std::string_view to_string(GameKind g);
GameKind parse_game(std::string_view s);

struct WorldConfig {
  std::size_t num_attributes = 3;
  std::size_t values_per_attribute = 6;
  std::array<double, 3> split{0.8, 0.1, 0.1};
};

struct ClassConfig {
  ClassScheme scheme = ClassScheme::first_attribute;
  std::size_t num_classes = 0;  // 0: values_per_attribute for first_attribute
};

struct AgentConfig {
  std::size_t hidden = 0;  // 0: word_length (Instant) or 1024 (Recurrent)
  std::size_t embedding = 1024;
};

struct TrainerConfig {
  std::size_t epochs = 50;
  std::size_t patience = 50;
  std::size_t batch_size = 32;
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t train_negatives = 0;   // 0: every other pool entry
  std::size_t probe_candidates = 0;  // 0: whole pool
};

struct SweepConfig {
  std::vector<std::size_t> alphabet_sizes{2, 4, 6, 8, 10};
  std::vector<std::size_t> word_lengths{1, 2, 5, 10, 25, 50, 100};
  std::vector<QuantizeRegime> regimes{QuantizeRegime::train_and_infer, QuantizeRegime::infer_only};
  std::size_t heatmap_candidates = 0;  // 0: whole pool
};

struct ExperimentConfig {
  int schema_version = kConfigSchemaVersion;
  std::string name = "experiment";
  GameKind game = GameKind::object_referential;
  WorldConfig world;
  ClassConfig classes;
  ChannelSpec channel;
  AgentConfig agents;
  TrainerConfig trainer;
  std::vector<std::size_t> eval_candidates;  // empty: default list for the game
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::optional<SweepConfig> sweep;
  std::string output_dir = "runs";
  std::size_t eval_jobs = 1;
};

/// Parses and validates a config document. Unknown keys are rejected.
ExperimentConfig config_from_json(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Fills every automatic value (hidden size, negatives, probe size, candidate
/// list) and validates the result.
ExperimentConfig resolve(ExperimentConfig config);

/// JSON form of a config; emits every field.
nlohmann::json config_to_json(const ExperimentConfig& config);

/// Switches the world to 4 attributes x 10 values (10^4 objects).
void apply_full_scale(ExperimentConfig& config);

/// Number of candidates the receiver can choose from (objects or classes).
std::size_t pool_size(const ExperimentConfig& config);

/// Candidate counts reported for the Object game.
const std::vector<std::size_t>& object_candidate_counts();

}  // namespace qcomm

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <json.hpp>
#include <span>
#include <vector>

#include "qcomm/channel.hpp"

namespace qcomm {

struct AgentShape {
  std::size_t sender_input = 0;    // object feature width
  std::size_t receiver_input = 0;  // candidate feature width (objects or class one-hots)
  std::size_t hidden = 0;
  std::size_t embedding = 0;       // recurrent channels only
};

/// Receiver output for one batch of episodes.
struct ScoreBatch {
  Var logits;                        // [b x n]
  std::vector<std::size_t> predicted;  // lowest index attaining the row maximum

  Tensor probabilities() const;
};

/// Sender (encoder u_theta + channel z_theta) and receiver (encoder u_phi +
/// channel decoder z_phi) sharing one ParamSet. Layers hold pointers into the
/// set, so the pair is move-only.
class AgentPair {
 public:
  AgentPair(const AgentShape& shape, const ChannelSpec& spec, Rng& init);
  AgentPair(const AgentPair&) = delete;
  AgentPair& operator=(const AgentPair&) = delete;
  AgentPair(AgentPair&&) = default;
  AgentPair& operator=(AgentPair&&) = default;

  MessageBatch sender_forward(Tape& tape, const Tensor& targets, Rng* noise, bool training) const;

  /// U^r for a [m x receiver_input] block of candidate features.
  Var encode_candidates(Tape& tape, const Tensor& candidates) const;

  /// Scores candidates given as rows of an encoded pool: row i, slot j is
  /// pool[index[i * n + j]].
  ScoreBatch receiver_forward(Tape& tape, const MessageBatch& msg, Var encoded_pool, std::span<const std::size_t> index,
                              std::size_t n) const;
  /// Every row scores the whole encoded pool in pool order.
  ScoreBatch receiver_forward_all(Tape& tape, const MessageBatch& msg, Var encoded_pool) const;
  /// Candidates given explicitly as a [b x n x receiver_input] tensor.
  ScoreBatch receiver_forward(Tape& tape, const MessageBatch& msg, const Tensor& candidates) const;

  Var receiver_state(Tape& tape, const MessageBatch& msg) const;

  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  const ChannelSpec& spec() const { return spec_; }
  const AgentShape& shape() const { return shape_; }

 private:
  AgentShape shape_;
  ChannelSpec spec_;
  ParamSet params_;
  Linear sender_encoder_;
  Linear receiver_encoder_;
  SenderChannel sender_channel_;
  ReceiverChannel receiver_channel_;
};

/// Hidden width implied by the channel: the word length for Instant, `recurrent_hidden` otherwise.
std::size_t default_hidden(const ChannelSpec& spec, std::size_t recurrent_hidden = 1024);

/// Mean softmax cross-entropy of the scores against the target positions.
Var game_loss(const ScoreBatch& scores, std::span<const std::size_t> target_positions);

std::vector<std::size_t> row_argmax(const Tensor& logits);

// Flat binary checkpoint: "QCKPT001", u64 little-endian header length, JSON
// header naming every tensor with its shape and offset, then little-endian doubles.
void save_checkpoint(const std::filesystem::path& path, const ParamSet& params,
                     const nlohmann::json& meta = nlohmann::json::object());
ParamSet load_checkpoint(const std::filesystem::path& path);
/// The free-form "meta" object stored in the header.
nlohmann::json checkpoint_meta(const std::filesystem::path& path);
/// Loads a checkpoint into `params`. Throws ConfigError naming the first
/// tensor whose name or shape does not match.
void load_checkpoint_into(const std::filesystem::path& path, ParamSet& params);

}  // namespace qcomm

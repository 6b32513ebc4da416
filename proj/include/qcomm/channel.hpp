// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qcomm/autograd.hpp"
#include "qcomm/layers.hpp"
#include "qcomm/rng.hpp"

namespace qcomm {

enum class Mode { continuous, gumbel_softmax, quantized };
enum class Architecture { instant, recurrent };
enum class QuantizeRegime { train_and_infer, infer_only };
enum class QuantizerScheme {
  levels,  // S = 1/(v-1), symbols {0..v-1}
  extended,  // S = 1/v, symbols {0..v}
};

std::string_view to_string(Mode m);
std::string_view to_string(Architecture a);
std::string_view to_string(QuantizeRegime r);
std::string_view to_string(QuantizerScheme s);
Mode parse_mode(std::string_view s);
Architecture parse_architecture(std::string_view s);
QuantizeRegime parse_regime(std::string_view s);
QuantizerScheme parse_scheme(std::string_view s);

/// Short labels used in result tables: "QT-Inst", "GS-RNN", ...
std::string comm_type_label(Mode m, Architecture a);

struct ChannelSpec {
  Mode mode = Mode::quantized;
  Architecture architecture = Architecture::instant;
  std::size_t alphabet_size = 10;
  std::size_t word_length = 100;
  std::size_t message_length = 1;
  QuantizeRegime regime = QuantizeRegime::infer_only;
  QuantizerScheme scheme = QuantizerScheme::levels;
  double gs_temperature = 1.0;
  bool gs_straight_through = false;

  /// Throws ConfigError on an inconsistent spec.
  void validate() const;

  /// Number of distinct symbol values one word position can take.
  std::size_t symbol_count() const;
  /// Integers stored per word in MessageBatch::symbols (word_length, 1 for GS, 0 for continuous).
  std::size_t symbol_width() const;
  bool discrete_at_inference() const { return mode != Mode::continuous; }

  friend bool operator==(const ChannelSpec&, const ChannelSpec&) = default;
};

/// Number of unique words or messages. Values beyond 2^63 are kept as base^exponent.
struct Capacity {
  enum class Kind { finite, overflow, unbounded };
  Kind kind = Kind::finite;
  std::uint64_t value = 0;
  std::uint64_t base = 0;
  std::uint64_t exponent = 0;

  static Capacity power(std::uint64_t base, std::uint64_t exponent);
  std::string to_string() const;
  /// Exact comparison against a finite count.
  bool at_least(std::uint64_t n) const;

  friend bool operator==(const Capacity&, const Capacity&) = default;
};

Capacity word_capacity(const ChannelSpec& spec);
Capacity message_capacity(const ChannelSpec& spec);

/// Per-word min-max normalization to [0, 1] over the last axis. Words whose
/// range is at most 1e-12 map to zeros.
Tensor normalize_words(const Tensor& x);
Var normalize_words(Var x);

double scaling_factor(const ChannelSpec& spec);

struct QuantizedWords {
  Tensor dequantized;
  std::vector<std::int32_t> symbols;
};

/// Rounds normalized words to the scheme's lattice (round half away from zero).
/// Throws ContractError when an input lies outside [0, 1] by more than 1e-9.
QuantizedWords quantize_words(const Tensor& normalized, const ChannelSpec& spec);
Tensor dequantize(std::span<const std::int32_t> symbols, const Shape& shape, const ChannelSpec& spec);

/// Forward: quantize_words(x).dequantized. Backward: identity.
Var ste_quantize(Var normalized, const ChannelSpec& spec, std::vector<std::int32_t>* symbols = nullptr);

/// Training: softmax((logits + Gumbel noise) / tau), noise drawn from `noise`.
/// Inference: one-hot at the row argmax (lowest index on ties).
Var gumbel_softmax_word(Var logits, Rng* noise, const ChannelSpec& spec, bool training,
                        std::vector<std::int32_t>* symbols = nullptr);

/// Lowest index attaining the maximum of `row`.
std::size_t argmax(std::span<const double> row);

/// A batch of messages. `words[s]` is the [batch x word_length] value the
/// receiver consumes at position s.
struct MessageBatch {
  Mode mode = Mode::continuous;
  std::size_t batch = 0;
  std::size_t length = 0;
  std::size_t word_length = 0;
  std::size_t symbol_width = 0;
  std::vector<Var> words;
  /// [batch x length x symbol_width]; present whenever the emitted words are discrete.
  std::optional<std::vector<std::int32_t>> symbols;

  /// [batch x length x word_length] copy of the floating-point view.
  Tensor dequantized() const;
  /// All symbols of one message, words concatenated.
  std::vector<std::int32_t> message_symbols(std::size_t row) const;
};

/// Sender-side channel network z_theta.
class SenderChannel {
 public:
  SenderChannel() = default;
  SenderChannel(ParamSet& params, const std::string& prefix, const ChannelSpec& spec, std::size_t hidden,
                std::size_t embedding, Rng& init);

  const Linear& output() const { return output_; }
  const Linear& embed() const { return embed_; }
  const Gru& gru() const { return gru_; }
  Parameter* start() const { return start_; }

 private:
  Linear output_;
  Linear embed_;
  Gru gru_;
  Parameter* start_ = nullptr;
};

/// Receiver-side channel network z_phi.
class ReceiverChannel {
 public:
  ReceiverChannel() = default;
  ReceiverChannel(ParamSet& params, const std::string& prefix, const ChannelSpec& spec, std::size_t hidden,
                  std::size_t embedding, Rng& init);

  const Linear& input() const { return input_; }
  const Gru& gru() const { return gru_; }

 private:
  Linear input_;
  Gru gru_;
};

MessageBatch instant_send(Tape& tape, Var encoded, const SenderChannel& channel, const ChannelSpec& spec, Rng* noise,
                          bool training);
MessageBatch recurrent_send(Tape& tape, Var encoded, const SenderChannel& channel, const ChannelSpec& spec, Rng* noise,
                            bool training);
MessageBatch send(Tape& tape, Var encoded, const SenderChannel& channel, const ChannelSpec& spec, Rng* noise,
                  bool training);

/// Decodes a message into z^r [batch x hidden].
Var receive(Tape& tape, const MessageBatch& msg, const ReceiverChannel& channel, const ChannelSpec& spec);

}  // namespace qcomm

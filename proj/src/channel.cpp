// SPDX-License-Identifier: Apache-2.0
#include "qcomm/channel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "qcomm/errors.hpp"

namespace qcomm {
namespace {

constexpr double kDegenerateRange = 1e-12;
constexpr double kRangeSlack = 1e-9;

template <typename E>
E parse_enum(std::string_view s, std::initializer_list<std::pair<std::string_view, E>> table, const char* what) {
  for (const auto& [name, value] : table)
    if (name == s) return value;
  std::string options;
  for (const auto& [name, value] : table) options += (options.empty() ? "" : ", ") + std::string(name);
  throw ConfigError(std::string("unknown ") + what + " '" + std::string(s) + "' (expected one of: " + options + ")");
}

void check_word_shape(const Tensor& t, std::size_t word_length, const char* what) {
  if (t.rank() != 2 || t.cols() != word_length) {
    throw DimensionError(std::string(what) + ": expected [b x " + std::to_string(word_length) + "], got " +
                         shape_string(t.shape()));
  }
}

}  // namespace

std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::continuous: return "continuous";
    case Mode::gumbel_softmax: return "gumbel_softmax";
    case Mode::quantized: return "quantized";
  }
  return "?";
}

std::string_view to_string(Architecture a) { return a == Architecture::instant ? "instant" : "recurrent"; }
std::string_view to_string(QuantizeRegime r) { return r == QuantizeRegime::infer_only ? "infer_only" : "train_and_infer"; }
std::string_view to_string(QuantizerScheme s) { return s == QuantizerScheme::levels ? "levels" : "extended"; }

Mode parse_mode(std::string_view s) {
  return parse_enum<Mode>(
      s, {{"continuous", Mode::continuous}, {"gumbel_softmax", Mode::gumbel_softmax}, {"quantized", Mode::quantized}},
      "mode");
}

Architecture parse_architecture(std::string_view s) {
  return parse_enum<Architecture>(s, {{"instant", Architecture::instant}, {"recurrent", Architecture::recurrent}},
                                  "architecture");
}

QuantizeRegime parse_regime(std::string_view s) {
  return parse_enum<QuantizeRegime>(
      s, {{"train_and_infer", QuantizeRegime::train_and_infer}, {"infer_only", QuantizeRegime::infer_only}},
      "quantize_regime");
}

QuantizerScheme parse_scheme(std::string_view s) {
  return parse_enum<QuantizerScheme>(s, {{"levels", QuantizerScheme::levels}, {"extended", QuantizerScheme::extended}},
                                     "quantizer_scheme");
}

std::string comm_type_label(Mode m, Architecture a) {
  std::string out = m == Mode::continuous ? "CN" : m == Mode::gumbel_softmax ? "GS" : "QT";
  return out + (a == Architecture::instant ? "-Inst" : "-RNN");
}

// ---------------------------------------------------------------------------
// ChannelSpec

void ChannelSpec::validate() const {
  if (word_length == 0) throw ConfigError("word_length must be positive");
  if (message_length == 0) throw ConfigError("message_length must be positive");
  if (architecture == Architecture::instant && message_length != 1) {
    throw ConfigError("instant channel requires message_length == 1, got " + std::to_string(message_length));
  }
  switch (mode) {
    case Mode::quantized:
      if (alphabet_size < 2) throw ConfigError("quantized mode requires alphabet_size >= 2");
      if (alphabet_size > static_cast<std::size_t>(std::numeric_limits<std::int32_t>::max() - 1)) {
        throw ConfigError("alphabet_size too large");
      }
      break;
    case Mode::gumbel_softmax:
      if (alphabet_size < 2) throw ConfigError("gumbel_softmax mode requires alphabet_size >= 2");
      if (alphabet_size != word_length) {
        throw ConfigError("gumbel_softmax words are one-hot: alphabet_size (" + std::to_string(alphabet_size) +
                          ") must equal word_length (" + std::to_string(word_length) + ")");
      }
      if (!(gs_temperature > 0.0)) throw ConfigError("gs_temperature must be positive");
      break;
    case Mode::continuous:
      break;
  }
}

std::size_t ChannelSpec::symbol_count() const {
  switch (mode) {
    case Mode::quantized: return scheme == QuantizerScheme::levels ? alphabet_size : alphabet_size + 1;
    case Mode::gumbel_softmax: return alphabet_size;
    case Mode::continuous: return 0;
  }
  return 0;
}

std::size_t ChannelSpec::symbol_width() const {
  switch (mode) {
    case Mode::quantized: return word_length;
    case Mode::gumbel_softmax: return 1;
    case Mode::continuous: return 0;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Capacity

Capacity Capacity::power(std::uint64_t base, std::uint64_t exponent) {
  Capacity c;
  c.base = base;
  c.exponent = exponent;
  constexpr std::uint64_t limit = std::uint64_t{1} << 63;
  std::uint64_t value = 1;
  for (std::uint64_t i = 0; i < exponent; ++i) {
    if (base != 0 && value > limit / base) {
      c.kind = Kind::overflow;
      return c;
    }
    value *= base;
    if (value > limit) {
      c.kind = Kind::overflow;
      return c;
    }
  }
  c.kind = Kind::finite;
  c.value = value;
  return c;
}

std::string Capacity::to_string() const {
  switch (kind) {
    case Kind::finite: return std::to_string(value);
    case Kind::overflow: return std::to_string(base) + "^" + std::to_string(exponent);
    case Kind::unbounded: return "unbounded";
  }
  return "?";
}

bool Capacity::at_least(std::uint64_t n) const {
  return kind != Kind::finite || value >= n;
}

Capacity word_capacity(const ChannelSpec& spec) {
  spec.validate();
  switch (spec.mode) {
    case Mode::quantized: return Capacity::power(spec.symbol_count(), spec.word_length);
    case Mode::gumbel_softmax: return Capacity::power(spec.alphabet_size, 1);
    case Mode::continuous: break;
  }
  Capacity c;
  c.kind = Capacity::Kind::unbounded;
  return c;
}

Capacity message_capacity(const ChannelSpec& spec) {
  const Capacity word = word_capacity(spec);
  switch (word.kind) {
    case Capacity::Kind::unbounded: return word;
    case Capacity::Kind::overflow: return Capacity::power(word.base, word.exponent * spec.message_length);
    case Capacity::Kind::finite: break;
  }
  Capacity c = Capacity::power(word.value, spec.message_length);
  if (c.kind == Capacity::Kind::overflow) {
    // Express in terms of the per-symbol base so the exponent stays meaningful.
    c = Capacity::power(word.base, word.exponent * spec.message_length);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Normalization

Tensor normalize_words(const Tensor& x) {
  require_finite(x, "normalize_words input");
  Tensor out(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto in = x.row(r);
    auto o = out.row(r);
    const auto [lo, hi] = std::minmax_element(in.begin(), in.end());
    const double range = *hi - *lo;
    if (range <= kDegenerateRange) continue;
    for (std::size_t j = 0; j < in.size(); ++j) o[j] = (in[j] - *lo) / range;
  }
  return out;
}

Var normalize_words(Var x) {
  Tensor out = normalize_words(x.value());
  const std::size_t out_id = x.tape()->size();
  return x.tape()->record(
      std::move(out), {x},
      [x, out_id](Tape& t, const Tensor& g) {
        Tensor* gx = t.grad_buffer(x);
        if (!gx) return;
        const Tensor& xv = t.value(x);
        const Tensor& y = t.value(Var(&t, out_id));
        for (std::size_t r = 0; r < xv.rows(); ++r) {
          const auto in = xv.row(r);
          const auto lo = std::min_element(in.begin(), in.end());
          const auto hi = std::max_element(in.begin(), in.end());
          const double range = *hi - *lo;
          if (range <= kDegenerateRange) continue;
          const std::size_t a = static_cast<std::size_t>(lo - in.begin());
          const std::size_t c = static_cast<std::size_t>(hi - in.begin());
          const auto gr = g.row(r);
          const auto yr = y.row(r);
          double g_sum = 0.0;
          double gy_sum = 0.0;
          for (std::size_t i = 0; i < gr.size(); ++i) {
            g_sum += gr[i];
            gy_sum += gr[i] * yr[i];
          }
          auto d = gx->row(r);
          for (std::size_t j = 0; j < gr.size(); ++j) d[j] += gr[j] / range;
          d[a] += (gy_sum - g_sum) / range;
          d[c] -= gy_sum / range;
        }
      },
      "normalize_words");
}

// ---------------------------------------------------------------------------
// Quantization

double scaling_factor(const ChannelSpec& spec) {
  if (spec.alphabet_size < 2) throw ConfigError("scaling factor needs alphabet_size >= 2");
  const double v = static_cast<double>(spec.alphabet_size);
  return spec.scheme == QuantizerScheme::levels ? 1.0 / (v - 1.0) : 1.0 / v;
}

QuantizedWords quantize_words(const Tensor& normalized, const ChannelSpec& spec) {
  const double s = scaling_factor(spec);
  const auto max_symbol = static_cast<std::int32_t>(spec.symbol_count() - 1);
  QuantizedWords out{Tensor(normalized.shape()), std::vector<std::int32_t>(normalized.size())};
  const auto in = normalized.data();
  auto deq = out.dequantized.data();
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double x = in[i];
    if (!(x >= -kRangeSlack && x <= 1.0 + kRangeSlack)) {
      throw ContractError("quantize: input " + std::to_string(x) + " is not normalized to [0, 1]");
    }
    auto sym = static_cast<std::int32_t>(std::round(x / s));
    sym = std::clamp<std::int32_t>(sym, 0, max_symbol);
    out.symbols[i] = sym;
    deq[i] = static_cast<double>(sym) * s;
  }
  return out;
}

Tensor dequantize(std::span<const std::int32_t> symbols, const Shape& shape, const ChannelSpec& spec) {
  const double s = scaling_factor(spec);
  Tensor out(shape);
  if (out.size() != symbols.size()) throw DimensionError("dequantize: symbol count does not match shape");
  auto o = out.data();
  for (std::size_t i = 0; i < symbols.size(); ++i) o[i] = static_cast<double>(symbols[i]) * s;
  return out;
}

Var ste_quantize(Var normalized, const ChannelSpec& spec, std::vector<std::int32_t>* symbols) {
  QuantizedWords q = quantize_words(normalized.value(), spec);
  if (symbols) *symbols = std::move(q.symbols);
  return straight_through(normalized, std::move(q.dequantized));
}

std::size_t argmax(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

Var gumbel_softmax_word(Var logits, Rng* noise, const ChannelSpec& spec, bool training,
                        std::vector<std::int32_t>* symbols) {
  if (!(spec.gs_temperature > 0.0)) throw ConfigError("gs_temperature must be positive");
  const Tensor& lv = logits.value();
  if (lv.rank() != 2) throw DimensionError("gumbel_softmax_word: logits must be [b x v]");
  Tape& tape = *logits.tape();
  if (!training) {
    Tensor hot(lv.shape(), 0.0);
    std::vector<std::int32_t> idx(lv.rows());
    for (std::size_t r = 0; r < lv.rows(); ++r) {
      const std::size_t k = argmax(lv.row(r));
      hot.at(r, k) = 1.0;
      idx[r] = static_cast<std::int32_t>(k);
    }
    if (symbols) *symbols = std::move(idx);
    return tape.constant(std::move(hot));
  }
  if (!noise) throw ContractError("gumbel_softmax_word: training requires a noise stream");
  Tensor g(lv.shape());
  for (double& v : g.data()) v = -std::log(-std::log(noise->uniform_open()));
  Var soft = softmax_rows(scale(add(logits, tape.constant(std::move(g))), 1.0 / spec.gs_temperature));
  if (!spec.gs_straight_through) return soft;
  const Tensor& sv = soft.value();
  Tensor hot(sv.shape(), 0.0);
  std::vector<std::int32_t> idx(sv.rows());
  for (std::size_t r = 0; r < sv.rows(); ++r) {
    const std::size_t k = argmax(sv.row(r));
    hot.at(r, k) = 1.0;
    idx[r] = static_cast<std::int32_t>(k);
  }
  if (symbols) *symbols = std::move(idx);
  return straight_through(soft, std::move(hot));
}

// ---------------------------------------------------------------------------
// MessageBatch

Tensor MessageBatch::dequantized() const {
  Tensor out({batch, length, word_length});
  for (std::size_t s = 0; s < words.size(); ++s) {
    const Tensor& w = words[s].value();
    for (std::size_t b = 0; b < batch; ++b) {
      const auto src = w.row(b);
      std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>((b * length + s) * word_length));
    }
  }
  return out;
}

std::vector<std::int32_t> MessageBatch::message_symbols(std::size_t row) const {
  if (!symbols) throw ContractError("message has no discrete symbol view");
  const std::size_t per_message = length * symbol_width;
  const auto first = symbols->begin() + static_cast<std::ptrdiff_t>(row * per_message);
  return {first, first + static_cast<std::ptrdiff_t>(per_message)};
}

// ---------------------------------------------------------------------------
// Channel networks

SenderChannel::SenderChannel(ParamSet& params, const std::string& prefix, const ChannelSpec& spec, std::size_t hidden,
                             std::size_t embedding, Rng& init) {
  spec.validate();
  output_ = Linear(params, prefix + ".output", hidden, spec.word_length, init);
  if (spec.architecture == Architecture::recurrent) {
    // The last word is never fed back, so a single-word message needs no embedding.
    if (spec.message_length > 1) {
      const bool bias = spec.mode != Mode::gumbel_softmax;
      embed_ = Linear(params, prefix + ".embed", spec.word_length, embedding, init, bias);
    }
    gru_ = Gru(params, prefix + ".gru", embedding, hidden, init);
    Rng stream = init.split(prefix + ".start");
    const double limit = std::sqrt(6.0 / static_cast<double>(1 + embedding));
    start_ = &params.add(prefix + ".start", stream.uniform({1, embedding}, -limit, limit));
  }
}

ReceiverChannel::ReceiverChannel(ParamSet& params, const std::string& prefix, const ChannelSpec& spec,
                                 std::size_t hidden, std::size_t embedding, Rng& init) {
  spec.validate();
  if (spec.architecture == Architecture::instant) {
    input_ = Linear(params, prefix + ".input", spec.word_length, hidden, init);
  } else {
    const bool bias = spec.mode != Mode::gumbel_softmax;
    input_ = Linear(params, prefix + ".embed", spec.word_length, embedding, init, bias);
    gru_ = Gru(params, prefix + ".gru", embedding, hidden, init);
  }
}

namespace {

// Turns the channel projection of one word into what goes on the wire.
Var emit_word(Var projected, const ChannelSpec& spec, Rng* noise, bool training, std::vector<std::int32_t>* symbols,
              bool* discrete) {
  *discrete = false;
  switch (spec.mode) {
    case Mode::continuous:
      return normalize_words(projected);
    case Mode::quantized: {
      Var normalized = normalize_words(projected);
      if (training && spec.regime == QuantizeRegime::infer_only) return normalized;
      *discrete = true;
      return ste_quantize(normalized, spec, symbols);
    }
    case Mode::gumbel_softmax: {
      Var word = gumbel_softmax_word(projected, noise, spec, training, symbols);
      *discrete = !training || spec.gs_straight_through;
      return word;
    }
  }
  throw ConfigError("unknown mode");
}

void append_symbols(MessageBatch& msg, std::size_t step, const std::vector<std::int32_t>& word_symbols) {
  const std::size_t w = msg.symbol_width;
  auto& all = *msg.symbols;
  for (std::size_t b = 0; b < msg.batch; ++b) {
    std::copy_n(word_symbols.begin() + static_cast<std::ptrdiff_t>(b * w), w,
                all.begin() + static_cast<std::ptrdiff_t>((b * msg.length + step) * w));
  }
}

MessageBatch empty_message(const ChannelSpec& spec, std::size_t batch) {
  MessageBatch msg;
  msg.mode = spec.mode;
  msg.batch = batch;
  msg.length = spec.message_length;
  msg.word_length = spec.word_length;
  msg.symbol_width = spec.symbol_width();
  return msg;
}

}  // namespace

MessageBatch instant_send(Tape& tape, Var encoded, const SenderChannel& channel, const ChannelSpec& spec, Rng* noise,
                          bool training) {
  spec.validate();
  if (spec.architecture != Architecture::instant) throw ConfigError("instant_send called with a recurrent spec");
  MessageBatch msg = empty_message(spec, encoded.value().rows());
  std::vector<std::int32_t> syms;
  bool discrete = false;
  Var word = emit_word(channel.output()(tape, encoded), spec, noise, training, &syms, &discrete);
  msg.words.push_back(word);
  if (discrete) msg.symbols = std::move(syms);
  return msg;
}

MessageBatch recurrent_send(Tape& tape, Var encoded, const SenderChannel& channel, const ChannelSpec& spec, Rng* noise,
                            bool training) {
  spec.validate();
  if (spec.architecture != Architecture::recurrent) throw ConfigError("recurrent_send called with an instant spec");
  const std::size_t batch = encoded.value().rows();
  if (encoded.value().cols() != channel.gru().hidden_size()) {
    throw DimensionError("recurrent_send: encoded width " + std::to_string(encoded.value().cols()) +
                         " does not match GRU hidden size " + std::to_string(channel.gru().hidden_size()));
  }
  MessageBatch msg = empty_message(spec, batch);
  msg.symbols.emplace(batch * msg.length * msg.symbol_width);
  bool all_discrete = true;
  Var hidden = encoded;
  Var input = add_row(tape.constant(Tensor({batch, channel.gru().input_size()}, 0.0)), tape.parameter(*channel.start()));
  for (std::size_t s = 0; s < spec.message_length; ++s) {
    hidden = channel.gru().step(tape, hidden, input);
    std::vector<std::int32_t> syms;
    bool discrete = false;
    Var word = emit_word(channel.output()(tape, hidden), spec, noise, training, &syms, &discrete);
    all_discrete = all_discrete && discrete;
    if (discrete) append_symbols(msg, s, syms);
    msg.words.push_back(word);
    if (s + 1 < spec.message_length) input = channel.embed()(tape, word);
  }
  if (!all_discrete) msg.symbols.reset();
  return msg;
}

MessageBatch send(Tape& tape, Var encoded, const SenderChannel& channel, const ChannelSpec& spec, Rng* noise,
                  bool training) {
  return spec.architecture == Architecture::instant ? instant_send(tape, encoded, channel, spec, noise, training)
                                                    : recurrent_send(tape, encoded, channel, spec, noise, training);
}

Var receive(Tape& tape, const MessageBatch& msg, const ReceiverChannel& channel, const ChannelSpec& spec) {
  if (msg.length != spec.message_length || msg.words.size() != spec.message_length || msg.word_length != spec.word_length) {
    throw DimensionError("receive: message shape [" + std::to_string(msg.length) + " x " +
                         std::to_string(msg.word_length) + "] does not match the channel spec");
  }
  for (const Var& w : msg.words) check_word_shape(w.value(), spec.word_length, "receive");
  if (spec.architecture == Architecture::instant) return channel.input()(tape, msg.words.front());
  const std::size_t h = channel.gru().hidden_size();
  Var hidden = tape.constant(Tensor({msg.batch, h}, 0.0));
  for (const Var& w : msg.words) hidden = channel.gru().step(tape, hidden, channel.input()(tape, w));
  return hidden;
}

}  // namespace qcomm

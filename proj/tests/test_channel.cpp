// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "qcomm/channel.hpp"
#include "qcomm/errors.hpp"
#include "support.hpp"

using namespace qcomm;

namespace {

ChannelSpec quantized(std::size_t v, std::size_t w, QuantizerScheme scheme = QuantizerScheme::levels) {
  ChannelSpec s;
  s.mode = Mode::quantized;
  s.alphabet_size = v;
  s.word_length = w;
  s.scheme = scheme;
  return s;
}

ChannelSpec gumbel(std::size_t v) {
  ChannelSpec s;
  s.mode = Mode::gumbel_softmax;
  s.alphabet_size = v;
  s.word_length = v;
  return s;
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("normalize examples") {
  CHECK(values(normalize_words(Tensor::matrix({{0, 2}}))) == std::vector<double>{0, 1});
  CHECK(values(normalize_words(Tensor::matrix({{5, 5, 5}}))) == std::vector<double>{0, 0, 0});
  CHECK(values(normalize_words(Tensor::matrix({{-1, 0, 3}}))) == std::vector<double>{0, 0.25, 1});
  // each row independently
  CHECK(values(normalize_words(Tensor::matrix({{0, 4}, {2, 3}}))) == std::vector<double>{0, 1, 0, 1});
}

TEST_CASE("normalize gradient") {
  Rng rng(21, "test");
  auto r = qcomm::testing::grad_check({rng.uniform({4, 6}, -2, 2)},
                                      [](Tape&, const std::vector<Var>& v) { return normalize_words(v[0]); }, rng);
  CHECK(r.worst <= 1e-5);
}

TEST_CASE("scaling factor examples") {
  CHECK(scaling_factor(quantized(2, 4)) == 1.0);
  CHECK(scaling_factor(quantized(10, 4, QuantizerScheme::extended)) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(scaling_factor(quantized(5, 4)) == 0.25);
  CHECK_THROWS_AS(scaling_factor(quantized(1, 4)), ConfigError);
}

TEST_CASE("quantize examples") {
  auto q = quantize_words(Tensor::matrix({{0, 0.25, 0.5, 1.0}}), quantized(5, 4));
  CHECK(q.symbols == std::vector<std::int32_t>{0, 1, 2, 4});
  CHECK(values(q.dequantized) == std::vector<double>{0, 0.25, 0.5, 1.0});
  auto b = quantize_words(Tensor::matrix({{0.4, 0.6}}), quantized(2, 2));
  CHECK(b.symbols == std::vector<std::int32_t>{0, 1});
  CHECK(values(b.dequantized) == std::vector<double>{0.0, 1.0});
  // extended scheme has symbols 0..v
  auto p = quantize_words(Tensor::matrix({{0.0, 0.96, 1.0}}), quantized(10, 3, QuantizerScheme::extended));
  CHECK(p.symbols == std::vector<std::int32_t>{0, 10, 10});
  CHECK_THROWS_AS(quantize_words(Tensor::matrix({{-0.01, 0.5}}), quantized(2, 2)), ContractError);
  CHECK_THROWS_AS(quantize_words(Tensor::matrix({{0.5, 1.1}}), quantized(2, 2)), ContractError);
  CHECK_NOTHROW(quantize_words(Tensor::matrix({{-1e-10, 1.0 + 1e-10}}), quantized(2, 2)));
}

TEST_CASE("round-trip bound over random words") {
  Rng rng(22, "test");
  for (std::size_t v : {2, 10, 100}) {
    for (auto scheme : {QuantizerScheme::levels, QuantizerScheme::extended}) {
      const ChannelSpec spec = quantized(v, 16, scheme);
      const double s = scaling_factor(spec);
      const Tensor x = rng.uniform({1000, 16});
      auto q = quantize_words(x, spec);
      for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(q.dequantized[i] - x[i]) <= s / 2 + 1e-15);
      const Tensor back = dequantize(q.symbols, x.shape(), spec);
      CHECK(back == q.dequantized);
    }
  }
}

TEST_CASE("ste_quantize forward and identity backward") {
  Tape tape(false);
  std::vector<std::int32_t> sym;
  Var out = ste_quantize(tape.constant(Tensor::matrix({{0, 0.5, 1}})), quantized(2, 3), &sym);
  CHECK(values(out.value()) == std::vector<double>{0, 1, 1});
  CHECK(sym == std::vector<std::int32_t>{0, 1, 1});

  Rng rng(23, "test");
  ParamSet params;
  Parameter& w = params.add("w", rng.uniform({3, 7}));
  Tape t2(true);
  t2.backward(sum(ste_quantize(t2.parameter(w), quantized(4, 7))));
  for (double g : w.grad.data()) CHECK(g == 1.0);
}

TEST_CASE("gumbel-softmax examples") {
  const ChannelSpec spec = gumbel(3);
  Tape tape(false);
  std::vector<std::int32_t> sym;
  Var hot = gumbel_softmax_word(tape.constant(Tensor::matrix({{0.1, 5.0, 0.3}})), nullptr, spec, false, &sym);
  CHECK(values(hot.value()) == std::vector<double>{0, 1, 0});
  CHECK(sym == std::vector<std::int32_t>{1});
  Var tie = gumbel_softmax_word(tape.constant(Tensor::matrix({{2.0, 2.0, 1.0}})), nullptr, spec, false);
  CHECK(values(tie.value()) == std::vector<double>{1, 0, 0});

  Rng noise(24, "gumbel-noise");
  Rng rng(25, "test");
  Var soft = gumbel_softmax_word(tape.constant(rng.uniform({20, 3}, -4, 4)), &noise, spec, true);
  for (std::size_t r = 0; r < 20; ++r) {
    const auto row = soft.value().row(r);
    CHECK(std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0) <= 1e-12);
  }
  ChannelSpec cold = spec;
  cold.gs_temperature = 0.0;
  CHECK_THROWS_AS(gumbel_softmax_word(tape.constant(Tensor::matrix({{1, 2, 3}})), &noise, cold, true), ConfigError);
}

TEST_CASE("gumbel-max frequency with a logit gap of 100") {
  const ChannelSpec spec = gumbel(4);
  Rng noise(26, "gumbel-noise");
  Tape tape(false);
  Tensor logits({10000, 4}, 0.0);
  for (std::size_t r = 0; r < 10000; ++r) logits.at(r, 2) = 100.0;
  Var soft = gumbel_softmax_word(tape.constant(logits), &noise, spec, true);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < 10000; ++r) hits += argmax(soft.value().row(r)) == 2;
  CHECK(hits >= 9990);
}

TEST_CASE("capacity examples and monotonicity") {
  CHECK(word_capacity(quantized(10, 6)).to_string() == "1000000");
  CHECK(word_capacity(quantized(2, 1)).to_string() == "2");
  const Capacity big = word_capacity(quantized(10, 100));
  CHECK(big.kind == Capacity::Kind::overflow);
  CHECK(big.base == 10);
  CHECK(big.exponent == 100);
  CHECK(big.at_least(1000));
  CHECK(word_capacity(gumbel(100)).to_string() == "100");
  ChannelSpec rnn = quantized(10, 2);
  rnn.architecture = Architecture::recurrent;
  rnn.message_length = 3;
  CHECK(message_capacity(rnn).to_string() == "1000000");
  for (std::size_t v = 2; v < 6; ++v)
    for (std::size_t w = 1; w < 5; ++w) {
      CHECK(word_capacity(quantized(v + 1, w)).value > word_capacity(quantized(v, w)).value);
      CHECK(word_capacity(quantized(v, w + 1)).value > word_capacity(quantized(v, w)).value);
    }
}

TEST_CASE("channel spec validation") {
  ChannelSpec s = quantized(10, 4);
  s.message_length = 2;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  ChannelSpec g = gumbel(5);
  g.word_length = 6;
  CHECK_THROWS_AS(g.validate(), ConfigError);
  CHECK_THROWS_AS(parse_mode("analog"), ConfigError);
  CHECK(parse_mode("gumbel_softmax") == Mode::gumbel_softmax);
}

namespace {

struct Fixture {
  ParamSet params;
  SenderChannel sender;
  ReceiverChannel receiver;
  Fixture(const ChannelSpec& spec, std::size_t hidden, std::size_t embedding = 8) {
    Rng init(31, "init");
    sender = SenderChannel(params, "s", spec, hidden, embedding, init);
    receiver = ReceiverChannel(params, "r", spec, hidden, embedding, init);
  }
};

}  // namespace

TEST_CASE("instant send: continuous is normalize(linear(u))") {
  ChannelSpec spec;
  spec.mode = Mode::continuous;
  spec.word_length = 6;
  Fixture f(spec, 6);
  Rng rng(32, "test");
  const Tensor u = rng.uniform({4, 6});
  Tape tape(false);
  MessageBatch msg = instant_send(tape, tape.constant(u), f.sender, spec, nullptr, false);
  CHECK(msg.length == 1);
  CHECK(!msg.symbols);
  CHECK(msg.words[0].value() == normalize_words(f.sender.output()(u)));
}

TEST_CASE("instant send regimes") {
  ChannelSpec qt = quantized(10, 2);
  qt.regime = QuantizeRegime::infer_only;
  ChannelSpec cn = qt;
  cn.mode = Mode::continuous;
  Fixture f(qt, 2);
  Rng rng(33, "test");
  const Tensor u = rng.uniform({64, 2});
  Tape tape(false);
  MessageBatch train_msg = instant_send(tape, tape.constant(u), f.sender, qt, nullptr, true);
  MessageBatch cont_msg = instant_send(tape, tape.constant(u), f.sender, cn, nullptr, true);
  CHECK(train_msg.words[0].value() == cont_msg.words[0].value());
  CHECK(!train_msg.symbols);

  MessageBatch infer_msg = instant_send(tape, tape.constant(u), f.sender, qt, nullptr, false);
  REQUIRE(infer_msg.symbols);
  std::set<std::vector<std::int32_t>> unique;
  for (std::size_t r = 0; r < 64; ++r) {
    auto m = infer_msg.message_symbols(r);
    for (auto s : m) CHECK((s >= 0 && s <= 9));
    unique.insert(m);
  }
  CHECK(unique.size() <= 64);
  // dequantized view equals dequantize(symbols)
  CHECK(infer_msg.dequantized() == dequantize(*infer_msg.symbols, {64, 1, 2}, qt));

  ChannelSpec both = qt;
  both.regime = QuantizeRegime::train_and_infer;
  MessageBatch ste_msg = instant_send(tape, tape.constant(u), f.sender, both, nullptr, true);
  CHECK(ste_msg.symbols);
  CHECK(ste_msg.words[0].value() == infer_msg.words[0].value());
}

TEST_CASE("instant send rejects a recurrent spec") {
  ChannelSpec spec = quantized(10, 4);
  Fixture f(spec, 4);
  ChannelSpec rnn = spec;
  rnn.architecture = Architecture::recurrent;
  rnn.message_length = 2;
  Tape tape(false);
  CHECK_THROWS_AS(instant_send(tape, tape.constant(Tensor({1, 4})), f.sender, rnn, nullptr, false), ConfigError);
}

TEST_CASE("recurrent send: gumbel-softmax inference gives six one-hot words") {
  ChannelSpec spec = gumbel(10);
  spec.architecture = Architecture::recurrent;
  spec.message_length = 6;
  Fixture f(spec, 12);
  Rng rng(34, "test");
  Tape tape(false);
  MessageBatch msg = recurrent_send(tape, tape.constant(rng.uniform({5, 12})), f.sender, spec, nullptr, false);
  CHECK(msg.words.size() == 6);
  REQUIRE(msg.symbols);
  for (std::size_t r = 0; r < 5; ++r) CHECK(msg.message_symbols(r).size() == 6);
  for (const Var& w : msg.words) {
    for (std::size_t r = 0; r < 5; ++r) {
      const auto row = w.value().row(r);
      CHECK(std::count(row.begin(), row.end(), 1.0) == 1);
      CHECK(std::count(row.begin(), row.end(), 0.0) == 9);
    }
  }
}

TEST_CASE("recurrent send: quantized words satisfy the round-trip bound; length 1 emits one word") {
  ChannelSpec spec = quantized(10, 5);
  spec.architecture = Architecture::recurrent;
  spec.message_length = 3;
  Fixture f(spec, 7);
  Rng rng(35, "test");
  Tape tape(false);
  MessageBatch msg = recurrent_send(tape, tape.constant(rng.uniform({4, 7})), f.sender, spec, nullptr, false);
  REQUIRE(msg.symbols);
  const Tensor deq = msg.dequantized();
  CHECK(deq == dequantize(*msg.symbols, {4, 3, 5}, spec));

  ChannelSpec one = spec;
  one.message_length = 1;
  Fixture g(one, 7);
  MessageBatch m1 = recurrent_send(tape, tape.constant(rng.uniform({4, 7})), g.sender, one, nullptr, false);
  CHECK(m1.words.size() == 1);
  CHECK(m1.words[0].shape() == Shape{4, 5});
}

TEST_CASE("receive: zero message and zero bias give zero state; shapes for every mode") {
  ChannelSpec spec;
  spec.mode = Mode::continuous;
  spec.word_length = 4;
  Fixture f(spec, 4);
  Tape tape(false);
  MessageBatch msg;
  msg.mode = Mode::continuous;
  msg.batch = 3;
  msg.length = 1;
  msg.word_length = 4;
  msg.words = {tape.constant(Tensor({3, 4}, 0.0))};
  const Tensor z = receive(tape, msg, f.receiver, spec).value();
  for (double v : z.data()) CHECK(v == 0.0);

  Rng rng(36, "test");
  for (Mode mode : {Mode::continuous, Mode::gumbel_softmax, Mode::quantized}) {
    for (Architecture arch : {Architecture::instant, Architecture::recurrent}) {
      ChannelSpec s = mode == Mode::gumbel_softmax ? gumbel(6) : quantized(4, 6);
      s.mode = mode;
      s.architecture = arch;
      s.message_length = arch == Architecture::instant ? 1 : 3;
      const std::size_t hidden = arch == Architecture::instant ? 6 : 9;
      Fixture fx(s, hidden);
      Tape t(false);
      MessageBatch m = send(t, t.constant(rng.uniform({5, hidden})), fx.sender, s, nullptr, false);
      CHECK(receive(t, m, fx.receiver, s).shape() == Shape{5, hidden});
    }
  }
}

TEST_CASE("receive gradient with respect to the message") {
  Rng rng(37, "test");
  for (Architecture arch : {Architecture::instant, Architecture::recurrent}) {
    ChannelSpec spec;
    spec.mode = Mode::continuous;
    spec.word_length = 4;
    spec.architecture = arch;
    spec.message_length = arch == Architecture::instant ? 1 : 3;
    const std::size_t hidden = arch == Architecture::instant ? 4 : 5;
    Fixture f(spec, hidden, 6);
    std::vector<Tensor> words;
    for (std::size_t s = 0; s < spec.message_length; ++s) words.push_back(rng.uniform({2, 4}));
    auto r = qcomm::testing::grad_check(
        words,
        [&](Tape& tape, const std::vector<Var>& v) {
          MessageBatch m;
          m.mode = Mode::continuous;
          m.batch = 2;
          m.length = spec.message_length;
          m.word_length = 4;
          m.words = v;
          return receive(tape, m, f.receiver, spec);
        },
        rng);
    CHECK(r.worst <= 1e-5);
  }
}

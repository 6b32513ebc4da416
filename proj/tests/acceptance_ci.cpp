// SPDX-License-Identifier: Apache-2.0
// Property checks on the 216-object world. Prints one PASS/FAIL line per check.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "qcomm/experiment.hpp"
#include "support.hpp"

using namespace qcomm;
namespace fs = std::filesystem;
using qcomm::testing::grad_check;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

ExperimentConfig config_file(const std::string& name) { return load_config(fs::path(QCOMM_CONFIG_DIR) / name); }

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("qcomm_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

ChannelSpec quantized(std::size_t v, std::size_t w) {
  ChannelSpec s;
  s.mode = Mode::quantized;
  s.alphabet_size = v;
  s.word_length = w;
  return s;
}

Outcome quantizer_round_trip() {
  Rng rng(901, "acceptance");
  double worst_ratio = 0.0;
  bool ok = true;
  for (std::size_t v : {2, 3, 10, 100}) {
    const ChannelSpec spec = quantized(v, 16);
    const double s = scaling_factor(spec);
    // 10^4 words of raw values, normalized the way the sender does it
    const Tensor words = normalize_words(rng.uniform({10000, 16}, -5.0, 5.0));
    const QuantizedWords q = quantize_words(words, spec);
    for (std::size_t i = 0; i < words.size(); ++i) {
      const double err = std::abs(q.dequantized[i] - words[i]);
      worst_ratio = std::max(worst_ratio, err / s);
      if (err > s / 2 + 1e-15) ok = false;
    }
    const auto [lo, hi] = std::minmax_element(q.symbols.begin(), q.symbols.end());
    if (*lo < 0 || static_cast<std::size_t>(*hi) >= spec.symbol_count()) ok = false;
    // distinct symbols dequantize to distinct values
    std::vector<std::int32_t> all(spec.symbol_count());
    std::iota(all.begin(), all.end(), 0);
    const Tensor levels = dequantize(all, {1, all.size()}, spec);
    std::set<double> seen(levels.data().begin(), levels.data().end());
    if (seen.size() != all.size()) ok = false;
    if (dequantize(q.symbols, words.shape(), spec) != q.dequantized) ok = false;
  }
  return {ok, "max error / S = " + fmt("%.6f", worst_ratio) + " (bound 0.5)"};
}

Outcome ste_contract() {
  Rng rng(902, "acceptance");
  std::size_t exact = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t rows = 1 + rng.below(8), cols = 2 + rng.below(30);
    const ChannelSpec spec = quantized(2 + rng.below(99), cols);
    ParamSet params;
    Parameter& x = params.add("x", rng.uniform({rows, cols}));
    const Tensor upstream = rng.uniform({rows, cols}, -3.0, 3.0);
    Tape tape(true);
    tape.backward(sum(mul(ste_quantize(tape.parameter(x), spec), tape.constant(upstream))));
    exact += x.grad == upstream;
  }
  return {exact == 100, std::to_string(exact) + "/100 tensors with gradient == upstream"};
}

// Norm-wise relative finite-difference error of the loss gradient for every
// parameter of an agent pair.
double agent_grad_error(const ChannelSpec& spec, std::string& worst_name) {
  const ObjectWorld w = build_world(2, 3);
  const Tensor pool = w.encode_all();
  const std::vector<std::size_t> objs{0, 4, 8};
  Rng init(903, "init");
  AgentPair agents({w.feature_dim(), w.feature_dim(), spec.architecture == Architecture::instant ? spec.word_length : 5, 4},
                   spec, init);
  auto loss = [&](bool record) {
    Rng noise(904, "gumbel-noise");
    Tape tape(record);
    MessageBatch msg = agents.sender_forward(tape, w.encode(objs), &noise, true);
    Var l = game_loss(agents.receiver_forward_all(tape, msg, agents.encode_candidates(tape, pool)), objs);
    if (record) tape.backward(l);
    return l.value().item();
  };
  loss(true);
  double worst = 0.0;
  const double h = 1e-5;
  for (auto& p : agents.params()) {
    const Tensor analytic = p->grad;
    Tensor numeric(p->value.shape());
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + h;
      const double up = loss(false);
      p->value[i] = saved - h;
      const double down = loss(false);
      p->value[i] = saved;
      numeric[i] = (up - down) / (2 * h);
    }
    const double err = qcomm::testing::relative_error(analytic.data(), numeric.data());
    if (err > worst) {
      worst = err;
      worst_name = p->name();
    }
  }
  return worst;
}

Outcome autodiff_checks() {
  Rng rng(905, "acceptance");
  double worst = 0.0;
  std::string where;
  auto note = [&](const std::string& name, double err) {
    if (err > worst) {
      worst = err;
      where = name;
    }
  };
  using V = const std::vector<Var>&;
  const Tensor a = rng.uniform({4, 6}, -1, 1), b = rng.uniform({4, 6}, -1, 1), c = rng.uniform({5, 6}, -1, 1);
  const Tensor m = rng.uniform({6, 3}, -1, 1), bias = rng.uniform({1, 6}, -1, 1);
  note("matmul", grad_check({a, m}, [](Tape&, V v) { return matmul(v[0], v[1]); }, rng).worst);
  note("matmul_nt", grad_check({a, c}, [](Tape&, V v) { return matmul_nt(v[0], v[1]); }, rng).worst);
  note("add", grad_check({a, b}, [](Tape&, V v) { return add(v[0], v[1]); }, rng).worst);
  note("sub", grad_check({a, b}, [](Tape&, V v) { return sub(v[0], v[1]); }, rng).worst);
  note("mul", grad_check({a, b}, [](Tape&, V v) { return mul(v[0], v[1]); }, rng).worst);
  note("scale", grad_check({a}, [](Tape&, V v) { return scale(v[0], 1.7); }, rng).worst);
  note("add_row", grad_check({a, bias}, [](Tape&, V v) { return add_row(v[0], v[1]); }, rng).worst);
  note("sigmoid", grad_check({a}, [](Tape&, V v) { return sigmoid(v[0]); }, rng).worst);
  note("tanh", grad_check({a}, [](Tape&, V v) { return tanh(v[0]); }, rng).worst);
  note("slice_cols", grad_check({a}, [](Tape&, V v) { return slice_cols(v[0], 1, 3); }, rng).worst);
  note("sum", grad_check({a}, [](Tape&, V v) { return sum(v[0]); }, rng).worst);
  note("softmax_rows", grad_check({a}, [](Tape&, V v) { return softmax_rows(v[0]); }, rng).worst);
  note("normalize", grad_check({a}, [](Tape&, V v) { return normalize_words(v[0]); }, rng).worst);
  const std::vector<std::size_t> targets{0, 5, 2, 3};
  note("softmax_cross_entropy",
       grad_check({a}, [&](Tape&, V v) { return softmax_cross_entropy(v[0], targets); }, rng).worst);
  const std::vector<std::size_t> index{0, 4, 1, 2, 3, 3, 4, 0};
  note("gather_scores", grad_check({a, c}, [&](Tape&, V v) { return gather_scores(v[0], v[1], index, 2); }, rng).worst);
  note("linear", grad_check({a, m, rng.uniform({1, 3}, -1, 1)},
                            [](Tape&, V v) { return add_row(matmul(v[0], v[1]), v[2]); }, rng)
                     .worst);
  const std::size_t e = 4, hdim = 5;
  std::vector<Tensor> gru_in{rng.uniform({3, hdim}, -1, 1),       rng.uniform({3, e}, -1, 1),
                             rng.uniform({e, 3 * hdim}, -1, 1),   rng.uniform({hdim, 3 * hdim}, -1, 1),
                             rng.uniform({1, 3 * hdim}, -1, 1),   rng.uniform({1, 3 * hdim}, -1, 1)};
  note("gru_step", grad_check(gru_in, [](Tape&, V v) { return gru_step(v[0], v[1], v[2], v[3], v[4], v[5]); }, rng).worst);
  note("gru x6", grad_check(gru_in,
                            [](Tape&, V v) {
                              Var s = v[0];
                              for (int t = 0; t < 6; ++t) s = gru_step(s, v[1], v[2], v[3], v[4], v[5]);
                              return s;
                            },
                            rng)
                     .worst);

  for (Mode mode : {Mode::continuous, Mode::gumbel_softmax}) {
    for (Architecture arch : {Architecture::instant, Architecture::recurrent}) {
      ChannelSpec spec;
      spec.mode = mode;
      spec.architecture = arch;
      spec.alphabet_size = 4;
      spec.word_length = 4;
      spec.message_length = arch == Architecture::instant ? 1 : 3;
      std::string name;
      const double err = agent_grad_error(spec, name);
      note(comm_type_label(mode, arch) + " " + name, err);
    }
  }
  return {worst <= 1e-5, "worst relative error " + fmt("%.2e", worst) + " (" + where + ")"};
}

Outcome gumbel_checks() {
  ChannelSpec spec;
  spec.mode = Mode::gumbel_softmax;
  spec.alphabet_size = 10;
  spec.word_length = 10;
  Rng rng(906, "acceptance");
  Rng noise(906, "gumbel-noise");
  Tape tape(false);
  const Tensor logits = rng.uniform({1000, 10}, -8, 8);
  const Tensor soft = gumbel_softmax_word(tape.constant(logits), &noise, spec, true).value();
  double worst_sum = 0.0;
  for (std::size_t r = 0; r < soft.rows(); ++r) {
    const auto row = soft.row(r);
    worst_sum = std::max(worst_sum, std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0));
  }
  const Tensor hard = gumbel_softmax_word(tape.constant(logits), nullptr, spec, false).value();
  bool one_hot = true;
  for (std::size_t r = 0; r < hard.rows(); ++r) {
    const auto row = hard.row(r);
    const std::size_t ones = std::count(row.begin(), row.end(), 1.0);
    const std::size_t zeros = std::count(row.begin(), row.end(), 0.0);
    one_hot = one_hot && ones == 1 && zeros == row.size() - 1 && row[argmax(logits.row(r))] == 1.0;
  }
  Tensor gap({10000, 4}, 0.0);
  for (std::size_t r = 0; r < gap.rows(); ++r) gap.at(r, 1) = 100.0;
  ChannelSpec four = spec;
  four.alphabet_size = 4;
  four.word_length = 4;
  const Tensor sampled = gumbel_softmax_word(tape.constant(gap), &noise, four, true).value();
  std::size_t agree = 0;
  for (std::size_t r = 0; r < sampled.rows(); ++r) agree += argmax(sampled.row(r)) == 1;
  const bool ok = worst_sum <= 1e-12 && one_hot && agree >= 9990;
  return {ok, "row sum error " + fmt("%.1e", worst_sum) + ", one-hot " + (one_hot ? "yes" : "no") + ", gap-100 agreement " +
                  std::to_string(agree) + "/10000"};
}

Outcome regime_equivalence() {
  const ExperimentConfig base = config_file("ci/qt_instant.json");
  const GameData data = make_game(base, 1);
  ExperimentConfig cn_cfg = base;
  cn_cfg.channel.mode = Mode::continuous;
  const GameData cn_data = make_game(cn_cfg, 1);
  AgentPair qt = make_agents(data, 1);
  AgentPair cn = make_agents(cn_data, 1);
  auto it = cn.params().begin();
  for (const auto& p : qt.params()) (*it++)->value = p->value;
  const std::vector<std::size_t> batch(data.split.train.begin(), data.split.train.begin() + 32);
  Tape ta(true), tb(true);
  const ScoreBatch sa =
      qt.receiver_forward_all(ta, qt.sender_forward(ta, data.world.encode(batch), nullptr, true),
                              qt.encode_candidates(ta, data.receiver_pool));
  const ScoreBatch sb =
      cn.receiver_forward_all(tb, cn.sender_forward(tb, cn_data.world.encode(batch), nullptr, true),
                              cn.encode_candidates(tb, cn_data.receiver_pool));
  ta.backward(game_loss(sa, batch));
  tb.backward(game_loss(sb, batch));
  bool grads = true;
  it = cn.params().begin();
  for (const auto& p : qt.params()) grads = grads && p->grad == (*it++)->grad;
  const bool logits = sa.logits.value() == sb.logits.value();
  return {logits && grads, std::string("logits ") + (logits ? "identical" : "differ") + ", gradients " +
                               (grads ? "identical" : "differ")};
}

// Each episode uses a freshly initialised pair, so episodes are independent draws.
Outcome untrained_baseline() {
  ExperimentConfig cfg = config_file("ci/qt_instant.json");
  cfg.seeds = {1};
  const GameData data = make_game(cfg, 1);
  const std::size_t episodes = 10000;
  const std::vector<std::size_t> counts{2, 10, 100};
  std::vector<std::size_t> correct(counts.size(), 0);
  const auto& test = data.split.test;
  for (std::size_t i = 0; i < episodes; ++i) {
    const AgentPair agents = make_agents(data, 100000 + i);
    const std::size_t target = test[i % test.size()];
    const InferenceBatch inf = infer(agents, data, std::span<const std::size_t>(&target, 1));
    Rng rng = Rng(7, "baseline").split(i);
    for (std::size_t k = 0; k < counts.size(); ++k) {
      const Episode ep = game_episode(data, target, counts[k], rng);
      correct[k] += count_correct(inf, std::span<const Episode>(&ep, 1), 1);
    }
  }
  bool ok = true;
  std::string detail;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    const double p = 1.0 / static_cast<double>(counts[k]);
    const double acc = static_cast<double>(correct[k]) / episodes;
    const double sigma = std::sqrt(p * (1 - p) / episodes);
    const double z = (acc - p) / sigma;
    ok = ok && std::abs(z) <= 3.0;
    detail += "n=" + std::to_string(counts[k]) + " acc " + fmt("%.4f", acc) + " (z " + fmt("%+.2f", z) + ") ";
  }
  return {ok, detail};
}

Outcome determinism() {
  const fs::path out = scratch("determinism");
  ExperimentConfig cfg = config_file("ci/qt_instant.json");
  cfg.seeds = {1, 2};
  cfg.output_dir = (out / "a").string();
  replicate(cfg);
  cfg.output_dir = (out / "b").string();
  replicate(cfg);
  const fs::path ra = out / "a" / cfg.name, rb = out / "b" / cfg.name;
  std::size_t same = 0, total = 0;
  for (const char* f : {"report.json", "results.csv", "seed-1/report.json", "seed-2/report.json", "seed-1/checkpoint.qckpt",
                        "seed-2/checkpoint.qckpt"}) {
    ++total;
    same += fs::exists(ra / f) && slurp(ra / f) == slurp(rb / f);
  }
  fs::remove_all(out);
  return {same == total, std::to_string(same) + "/" + std::to_string(total) + " output files byte-identical"};
}

Outcome classification() {
  const fs::path out = scratch("classification");
  ExperimentConfig cfg = config_file("ci/classification.json");
  cfg.output_dir = out.string();
  const MetricsReport r = replicate(cfg, false);
  fs::remove_all(out);
  std::optional<double> acc10;
  for (const auto& row : r.accuracy)
    if (row.n == 10) acc10 = row.mean;
  bool noum_ok = !r.seeds.empty();
  std::size_t min_noum = 0;
  for (const auto& s : r.seeds) {
    const std::size_t n = s.test.noum.value_or(0);
    min_noum = min_noum == 0 ? n : std::min(min_noum, n);
    noum_ok = noum_ok && n >= cfg.classes.num_classes;
  }
  const bool ok = acc10 && *acc10 >= 0.95 && noum_ok && !r.partial;
  return {ok, "K=" + std::to_string(cfg.classes.num_classes) + ", mean accuracy at n=10 " + fmt("%.4f", acc10.value_or(NAN)) +
                  ", min NoUM " + std::to_string(min_noum)};
}

Outcome sweep_trend() {
  const fs::path out = scratch("sweep");
  ExperimentConfig cfg = config_file("ci/sweep.json");
  cfg.output_dir = out.string();
  const SweepGrid grid = run_sweep(cfg, 1, false);
  fs::remove_all(out);
  bool ok = true;
  std::string detail;
  for (QuantizeRegime regime : cfg.sweep->regimes) {
    const auto hm = heatmap(grid, regime, false);
    std::vector<double> cols(cfg.sweep->word_lengths.size(), 0.0);
    for (std::size_t j = 0; j < cols.size(); ++j) {
      for (const auto& row : hm) cols[j] += row[j];
      cols[j] /= static_cast<double>(hm.size());
    }
    detail += std::string(to_string(regime)) + " [";
    for (std::size_t j = 0; j < cols.size(); ++j) {
      detail += (j ? " " : "") + fmt("%.3f", cols[j]);
      if (std::isnan(cols[j]) || (j > 0 && cols[j] < cols[j - 1] - 0.02)) ok = false;
    }
    detail += "] ";
  }
  return {ok, "column means by word length: " + detail};
}

struct Check {
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Check> checks{
      {"quantizer round trip", quantizer_round_trip},
      {"straight-through gradient", ste_contract},
      {"finite-difference gradients", autodiff_checks},
      {"gumbel-softmax sampling", gumbel_checks},
      {"infer-only regime matches continuous", regime_equivalence},
      {"untrained baseline near chance", untrained_baseline},
      {"byte-identical reruns", determinism},
      {"classification game", classification},
      {"sweep accuracy grows with word length", sweep_trend},
  };
  int failures = 0;
  for (const auto& c : checks) {
    if (argc > 1 && std::string(c.name).find(argv[1]) == std::string::npos) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s  %-40s %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}

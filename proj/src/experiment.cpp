// SPDX-License-Identifier: Apache-2.0
#include "qcomm/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <exception>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "qcomm/errors.hpp"
#include "qcomm/optim.hpp"

#ifndef QCOMM_VERSION
#define QCOMM_VERSION "0.0.0"
#endif

namespace qcomm {
namespace {

using nlohmann::json;

constexpr std::size_t kInferChunk = 256;
constexpr std::size_t kScoreChunk = 64;

Tensor rows_of(const Tensor& m, std::span<const std::size_t> rows) {
  const std::size_t d = m.cols();
  Tensor out({rows.size(), d});
  auto dst = out.data();
  auto src = m.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(rows[i] * d), d, dst.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return out;
}

void write_json(const std::filesystem::path& path, const json& doc) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("failed while writing " + path.string());
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(path.string() + " is not valid JSON: " + e.what());
  }
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json eval_to_json(const EvalResult& e) {
  json points = json::array();
  for (const auto& p : e.points) {
    json j{{"n", p.n}, {"accuracy", optional_number(p.accuracy)}, {"correct", p.correct}, {"episodes", p.episodes}};
    if (!p.error.empty()) j["error"] = p.error;
    points.push_back(std::move(j));
  }
  return {{"targets", e.targets}, {"noum", e.noum ? json(*e.noum) : json(nullptr)}, {"accuracy", points}};
}

EvalResult eval_from_json(const json& j) {
  EvalResult e;
  e.targets = j.at("targets").get<std::size_t>();
  if (!j.at("noum").is_null()) e.noum = j.at("noum").get<std::size_t>();
  for (const auto& p : j.at("accuracy")) {
    AccuracyPoint a;
    a.n = p.at("n").get<std::size_t>();
    if (!p.at("accuracy").is_null()) a.accuracy = p.at("accuracy").get<double>();
    a.correct = p.at("correct").get<std::size_t>();
    a.episodes = p.at("episodes").get<std::size_t>();
    a.error = p.value("error", "");
    e.points.push_back(std::move(a));
  }
  return e;
}

json seed_to_json(const SeedReport& s) {
  json curve = json::array();
  for (const auto& r : s.curve) {
    curve.push_back({{"epoch", r.epoch},
                     {"train_loss", std::isfinite(r.train_loss) ? json(r.train_loss) : json(nullptr)},
                     {"valid_accuracy", r.valid_accuracy}});
  }
  json j{{"seed", s.seed},
         {"ok", s.ok},
         {"best_epoch", s.best_epoch},
         {"best_valid_accuracy", s.best_valid_accuracy},
         {"epochs_run", s.epochs_run},
         {"curve", curve},
         {"test", eval_to_json(s.test)}};
  if (!s.ok) j["error"] = s.error;
  return j;
}

SeedReport seed_from_json(const json& j) {
  SeedReport s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.ok = j.at("ok").get<bool>();
  s.error = j.value("error", "");
  s.best_epoch = j.at("best_epoch").get<std::size_t>();
  s.best_valid_accuracy = j.at("best_valid_accuracy").get<double>();
  s.epochs_run = j.at("epochs_run").get<std::size_t>();
  for (const auto& r : j.at("curve")) {
    EpochRecord e;
    e.epoch = r.at("epoch").get<std::size_t>();
    e.train_loss = r.at("train_loss").is_null() ? std::numeric_limits<double>::quiet_NaN() : r.at("train_loss").get<double>();
    e.valid_accuracy = r.at("valid_accuracy").get<double>();
    s.curve.push_back(e);
  }
  s.test = eval_from_json(j.at("test"));
  return s;
}

void mean_std(const std::vector<double>& xs, double& mean, double& sd) {
  mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  sd = std::sqrt(ss / static_cast<double>(xs.size()));
}

// Runs fn(i) for i in [0, count) on up to `jobs` threads.
template <typename Fn>
void parallel_for(std::size_t count, std::size_t jobs, Fn fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> workers;
  for (std::size_t t = 0; t < jobs; ++t) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  if (failure) std::rethrow_exception(failure);
}

void make_dirs(const std::filesystem::path& p) {
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec) throw IoError("cannot create directory " + p.string() + ": " + ec.message());
}

}  // namespace

std::string_view library_version() { return QCOMM_VERSION; }

AgentShape GameData::agent_shape() const {
  return {sender_features.cols(), receiver_pool.cols(), config.agents.hidden, config.agents.embedding};
}

GameData make_game(const ExperimentConfig& config, std::uint64_t seed) {
  GameData d{config, build_world(config.world.num_attributes, config.world.values_per_attribute), {}, {}, {}, {}, {}};
  const std::size_t objects = d.world.object_count();
  d.sender_features = d.world.encode_all();
  if (config.game == GameKind::object_classification) {
    Rng class_rng(seed, "class-map");
    d.classes = make_class_map(d.world, config.classes.scheme, config.classes.num_classes, class_rng);
    d.receiver_pool = class_encodings(d.classes->num_classes);
    d.answer = d.classes->label;
  } else {
    d.receiver_pool = d.sender_features;
    d.answer.resize(objects);
    for (std::size_t i = 0; i < objects; ++i) d.answer[i] = i;
  }
  Rng split_rng(seed, "data-split");
  d.split = make_split(objects, config.world.split, d.receiver_pool.rows(), split_rng);
  return d;
}

Episode game_episode(const GameData& data, std::size_t object, std::size_t n, Rng& rng) {
  if (data.classes) return make_classification_episode(object, *data.classes, n, rng);
  return make_episode(object, data.pool_size(), n, rng);
}

AgentPair make_agents(const GameData& data, std::uint64_t seed) {
  Rng init(seed, "init");
  return AgentPair(data.agent_shape(), data.config.channel, init);
}

InferenceBatch infer(const AgentPair& agents, const GameData& data, std::span<const std::size_t> objects) {
  InferenceBatch out;
  {
    Tape tape(false);
    out.encoded_pool = agents.encode_candidates(tape, data.receiver_pool).value();
  }
  const std::size_t h = out.encoded_pool.cols();
  out.receiver_state = Tensor({objects.size(), h});
  bool discrete = true;
  std::vector<std::vector<std::int32_t>> messages;
  for (std::size_t start = 0; start < objects.size(); start += kInferChunk) {
    const auto chunk = objects.subspan(start, std::min(kInferChunk, objects.size() - start));
    Tape tape(false);
    MessageBatch msg = agents.sender_forward(tape, rows_of(data.sender_features, chunk), nullptr, false);
    const Tensor& z = agents.receiver_state(tape, msg).value();
    std::copy(z.data().begin(), z.data().end(), out.receiver_state.data().begin() + static_cast<std::ptrdiff_t>(start * h));
    if (!msg.symbols) discrete = false;
    if (discrete) {
      for (std::size_t r = 0; r < chunk.size(); ++r) messages.push_back(msg.message_symbols(r));
    }
  }
  if (discrete && !objects.empty()) out.messages = std::move(messages);
  return out;
}

std::size_t count_correct(const InferenceBatch& inference, std::span<const Episode> episodes, std::size_t jobs) {
  const Tensor& z = inference.receiver_state;
  if (episodes.size() != z.rows()) throw DimensionError("count_correct: one episode per inference row is required");
  const std::size_t chunks = (episodes.size() + kScoreChunk - 1) / kScoreChunk;
  std::vector<std::size_t> correct(chunks, 0);
  parallel_for(chunks, jobs, [&](std::size_t c) {
    const std::size_t begin = c * kScoreChunk;
    const std::size_t end = std::min(episodes.size(), begin + kScoreChunk);
    std::vector<std::size_t> rows(end - begin);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = begin + i;
    const Tensor scores = matmul_nt(rows_of(z, rows), inference.encoded_pool);
    std::size_t hits = 0;
    for (std::size_t i = begin; i < end; ++i) {
      const auto row = scores.row(i - begin);
      const Episode& ep = episodes[i];
      std::size_t best = 0;
      double best_score = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < ep.candidates.size(); ++j) {
        const double s = row[ep.candidates[j]];
        if (s > best_score) {
          best_score = s;
          best = j;
        }
      }
      if (best == ep.target_position) ++hits;
    }
    correct[c] = hits;
  });
  std::size_t total = 0;
  for (std::size_t h : correct) total += h;
  return total;
}

std::size_t count_unique(const std::vector<std::vector<std::int32_t>>& messages) {
  std::set<std::vector<std::int32_t>> unique(messages.begin(), messages.end());
  return unique.size();
}

EvalResult evaluate(const AgentPair& agents, const GameData& data, Phase phase, std::span<const std::size_t> counts,
                    std::uint64_t seed, std::size_t jobs, std::string_view stream) {
  const auto& targets = data.split.targets(phase);
  EvalResult result;
  result.targets = targets.size();
  const InferenceBatch inference = infer(agents, data, targets);
  if (inference.messages) result.noum = count_unique(*inference.messages);
  const Rng root(seed, stream);
  for (std::size_t n : counts) {
    AccuracyPoint p;
    p.n = n;
    if (n == 0 || n > data.pool_size()) {
      p.error = "candidate count " + std::to_string(n) + " outside [1, " + std::to_string(data.pool_size()) + "]";
      result.points.push_back(std::move(p));
      continue;
    }
    Rng rng = root.split(static_cast<std::uint64_t>(n));
    std::vector<Episode> episodes;
    episodes.reserve(targets.size());
    for (std::size_t t : targets) episodes.push_back(game_episode(data, t, n, rng));
    p.episodes = episodes.size();
    p.correct = count_correct(inference, episodes, jobs);
    p.accuracy = static_cast<double>(p.correct) / static_cast<double>(p.episodes);
    result.points.push_back(std::move(p));
  }
  return result;
}

std::optional<std::size_t> noum(const AgentPair& agents, const GameData& data) {
  if (agents.spec().mode == Mode::continuous) return std::nullopt;
  const InferenceBatch inference = infer(agents, data, data.split.test);
  if (!inference.messages) return std::nullopt;
  return count_unique(*inference.messages);
}

TrainResult train(const GameData& data, std::uint64_t seed) {
  const ExperimentConfig& cfg = data.config;
  const TrainerConfig& t = cfg.trainer;
  TrainResult result{make_agents(data, seed), {}};
  AgentPair& agents = result.agents;
  SeedReport& report = result.report;
  report.seed = seed;

  Adam adam(agents.params(), {t.learning_rate, t.beta1, t.beta2, t.epsilon});
  const Rng shuffle_root(seed, "shuffle");
  Rng candidates(seed, "candidate-sampling");
  Rng noise(seed, "gumbel-noise");
  const std::size_t pool = data.pool_size();
  const std::size_t probe = std::min(t.probe_candidates, pool);
  const std::size_t probe_list[] = {probe};
  const bool full_pool = t.train_negatives + 1 == pool;
  const std::size_t n_train = t.train_negatives + 1;

  auto validate = [&] {
    return *evaluate(agents, data, Phase::valid, probe_list, seed, cfg.eval_jobs, "valid").points.front().accuracy;
  };

  double best = validate();
  report.curve.push_back({0, std::numeric_limits<double>::quiet_NaN(), best});
  report.best_valid_accuracy = best;
  ParamSet best_params = agents.params();
  std::size_t since_best = 0;

  std::vector<std::size_t> order = data.split.train;
  for (std::size_t epoch = 1; epoch <= t.epochs; ++epoch) {
    order = data.split.train;
    Rng shuffle = shuffle_root.split(static_cast<std::uint64_t>(epoch));
    shuffle.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += t.batch_size) {
      const auto batch = std::span<const std::size_t>(order).subspan(start, std::min(t.batch_size, order.size() - start));
      try {
        Tape tape(true);
        MessageBatch msg = agents.sender_forward(tape, rows_of(data.sender_features, batch), &noise, true);
        Var encoded = agents.encode_candidates(tape, data.receiver_pool);
        std::vector<std::size_t> positions(batch.size());
        ScoreBatch scores;
        if (full_pool) {
          for (std::size_t i = 0; i < batch.size(); ++i) positions[i] = data.answer[batch[i]];
          scores = agents.receiver_forward_all(tape, msg, encoded);
        } else {
          std::vector<std::size_t> index;
          index.reserve(batch.size() * n_train);
          for (std::size_t i = 0; i < batch.size(); ++i) {
            Episode ep = game_episode(data, batch[i], n_train, candidates);
            positions[i] = ep.target_position;
            index.insert(index.end(), ep.candidates.begin(), ep.candidates.end());
          }
          scores = agents.receiver_forward(tape, msg, encoded, index, n_train);
        }
        Var loss = game_loss(scores, positions);
        loss_sum += loss.value().item();
        tape.backward(loss);
      } catch (const NumericError& e) {
        throw NumericError("non-finite value at epoch " + std::to_string(epoch) + ", step " + std::to_string(steps) +
                           " (seed " + std::to_string(seed) + "): " + e.what());
      }
      adam.step(agents.params());
      ++steps;
    }
    const double acc = validate();
    report.curve.push_back({epoch, steps ? loss_sum / static_cast<double>(steps) : 0.0, acc});
    report.epochs_run = epoch;
    if (acc >= best) {  // ties keep the later epoch
      best = acc;
      report.best_epoch = epoch;
      report.best_valid_accuracy = acc;
      best_params = agents.params();
      since_best = 0;
    } else if (++since_best >= t.patience) {
      break;
    }
  }
  agents.params().assign_values(best_params);
  return result;
}

MetricsReport aggregate(const ExperimentConfig& config, std::vector<SeedReport> seeds) {
  std::sort(seeds.begin(), seeds.end(), [](const SeedReport& a, const SeedReport& b) { return a.seed < b.seed; });
  MetricsReport r;
  r.config = config;
  r.partial = seeds.size() != config.seeds.size();
  for (const auto& s : seeds)
    if (!s.ok) r.partial = true;
  for (std::size_t n : config.eval_candidates) {
    std::vector<double> xs;
    for (const auto& s : seeds) {
      if (!s.ok) continue;
      for (const auto& p : s.test.points)
        if (p.n == n && p.accuracy) xs.push_back(*p.accuracy);
    }
    if (xs.empty()) continue;
    AggregateRow row;
    row.n = n;
    row.seeds = xs.size();
    mean_std(xs, row.mean, row.std);
    r.accuracy.push_back(row);
  }
  std::vector<double> noums;
  for (const auto& s : seeds)
    if (s.ok && s.test.noum) noums.push_back(static_cast<double>(*s.test.noum));
  if (!noums.empty()) {
    double m = 0.0, sd = 0.0;
    mean_std(noums, m, sd);
    r.noum_mean = m;
    r.noum_std = sd;
  }
  r.seeds = std::move(seeds);
  return r;
}

json report_to_json(const MetricsReport& r) {
  json seeds = json::array();
  for (const auto& s : r.seeds) seeds.push_back(seed_to_json(s));
  json acc = json::array();
  for (const auto& a : r.accuracy) acc.push_back({{"n", a.n}, {"mean", a.mean}, {"std", a.std}, {"seeds", a.seeds}});
  json config = config_to_json(r.config);
  config.erase("output_dir");
  return {{"kind", "qcomm-report"},
          {"config", config},
          {"comm_type", comm_type_label(r.config.channel.mode, r.config.channel.architecture)},
          {"seeds", seeds},
          {"aggregate", {{"accuracy", acc}, {"noum_mean", optional_number(r.noum_mean)}, {"noum_std", optional_number(r.noum_std)}}},
          {"partial", r.partial}};
}

MetricsReport report_from_json(const json& doc) {
  if (!doc.is_object() || doc.value("kind", "") != "qcomm-report") throw ConfigError("not a run report");
  MetricsReport r;
  r.config = config_from_json(doc.at("config"));
  for (const auto& s : doc.at("seeds")) r.seeds.push_back(seed_from_json(s));
  const json& agg = doc.at("aggregate");
  for (const auto& a : agg.at("accuracy")) {
    r.accuracy.push_back({a.at("n").get<std::size_t>(), a.at("mean").get<double>(), a.at("std").get<double>(),
                          a.at("seeds").get<std::size_t>()});
  }
  if (!agg.at("noum_mean").is_null()) r.noum_mean = agg.at("noum_mean").get<double>();
  if (!agg.at("noum_std").is_null()) r.noum_std = agg.at("noum_std").get<double>();
  r.partial = doc.at("partial").get<bool>();
  return r;
}

const std::vector<std::string>& long_table_header() {
  static const std::vector<std::string> h{"game",   "mode", "architecture", "alphabet", "word_length", "message_length",
                                          "regime", "seed", "n",            "accuracy", "noum",        "best_epoch"};
  return h;
}

namespace {

std::vector<std::string> long_row(const ExperimentConfig& c, const SeedReport& s, const AccuracyPoint& p) {
  const ChannelSpec& ch = c.channel;
  return {std::string(to_string(c.game)),
          std::string(to_string(ch.mode)),
          std::string(to_string(ch.architecture)),
          std::to_string(ch.alphabet_size),
          std::to_string(ch.word_length),
          std::to_string(ch.message_length),
          std::string(to_string(ch.regime)),
          std::to_string(s.seed),
          std::to_string(p.n),
          p.accuracy ? format_double(*p.accuracy) : "",
          s.test.noum ? std::to_string(*s.test.noum) : "",
          std::to_string(s.best_epoch)};
}

}  // namespace

CsvTable long_table(const MetricsReport& report) {
  CsvTable t;
  t.header = long_table_header();
  for (const auto& s : report.seeds) {
    if (!s.ok) continue;
    for (const auto& p : s.test.points) t.rows.push_back(long_row(report.config, s, p));
  }
  return t;
}

std::filesystem::path RunPaths::seed_dir(std::uint64_t seed) const { return root / ("seed-" + std::to_string(seed)); }
std::filesystem::path RunPaths::checkpoint(std::uint64_t seed) const { return seed_dir(seed) / "checkpoint.qckpt"; }

RunPaths run_paths(const ExperimentConfig& config) {
  return {std::filesystem::path(config.output_dir) / config.name};
}

MetricsReport replicate(const ExperimentConfig& config, bool write, const ProgressFn& progress) {
  const auto started = std::chrono::steady_clock::now();
  const std::string started_utc = utc_now();
  const RunPaths paths = run_paths(config);
  if (write) make_dirs(paths.root);
  std::vector<SeedReport> seeds;
  json seed_times = json::object();
  std::exception_ptr first_failure;
  for (std::uint64_t seed : config.seeds) {
    const auto t0 = std::chrono::steady_clock::now();
    if (progress) progress("seed " + std::to_string(seed) + ": training " + config.name);
    SeedReport report;
    report.seed = seed;
    try {
      const GameData data = make_game(config, seed);
      TrainResult tr = train(data, seed);
      report = std::move(tr.report);
      report.test = evaluate(tr.agents, data, Phase::test, config.eval_candidates, seed, config.eval_jobs);
      if (write) {
        make_dirs(paths.seed_dir(seed));
        save_checkpoint(paths.checkpoint(seed), tr.agents.params(),
                        {{"seed", seed},
                         {"name", config.name},
                         {"best_epoch", report.best_epoch},
                         {"game", std::string(to_string(config.game))},
                         {"channel", config_to_json(config).at("channel")}});
        write_split(paths.seed_dir(seed) / "split.txt", data.split);
        write_json(paths.seed_dir(seed) / "report.json", seed_to_json(report));
      }
    } catch (const Error& e) {
      report.ok = false;
      report.error = e.what();
      if (!first_failure) first_failure = std::current_exception();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    seed_times[std::to_string(seed)] = secs;
    if (progress) {
      std::string line = "seed " + std::to_string(seed) + ": " + (report.ok ? "done" : "failed: " + report.error);
      if (report.ok) line += " (best epoch " + std::to_string(report.best_epoch) + ")";
      progress(line);
    }
    seeds.push_back(std::move(report));
  }
  MetricsReport report = aggregate(config, std::move(seeds));
  if (write) {
    write_json(paths.report(), report_to_json(report));
    save_csv(paths.results(), long_table(report));
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    write_json(paths.manifest(), {{"kind", "qcomm-manifest"},
                                  {"version", library_version()},
                                  {"started_utc", started_utc},
                                  {"wall_seconds", wall},
                                  {"seed_wall_seconds", seed_times},
                                  {"seeds", config.seeds},
                                  {"config", config_to_json(config)}});
  }
  if (first_failure) std::rethrow_exception(first_failure);
  return report;
}

SeedReport evaluate_checkpoint(const ExperimentConfig& config, const std::filesystem::path& checkpoint,
                               std::span<const std::size_t> counts) {
  json meta;
  try {
    meta = checkpoint_meta(checkpoint);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  if (meta.contains("channel")) {
    const json current = config_to_json(config).at("channel");
    for (const auto& [key, value] : meta.at("channel").items()) {
      if (key == "quantize_regime" || !current.contains(key) || current.at(key) == value) continue;
      throw ConfigError("checkpoint " + checkpoint.string() + " was trained with channel." + key + " = " +
                        value.dump() + " but the config has " + current.at(key).dump());
    }
  }
  const std::uint64_t seed = meta.contains("seed") ? meta.at("seed").get<std::uint64_t>() : config.seeds.front();
  const GameData data = make_game(config, seed);
  AgentPair agents = make_agents(data, seed);
  try {
    load_checkpoint_into(checkpoint, agents.params());
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  SeedReport report;
  report.seed = seed;
  report.best_epoch = meta.value("best_epoch", std::size_t{0});
  const std::vector<std::size_t> list = counts.empty() ? config.eval_candidates
                                                        : std::vector<std::size_t>(counts.begin(), counts.end());
  report.test = evaluate(agents, data, Phase::test, list, seed, config.eval_jobs);
  return report;
}

// ---------------------------------------------------------------------------
// Sweeps

ExperimentConfig sweep_cell_config(const ExperimentConfig& base, std::size_t alphabet, std::size_t word_length,
                                   QuantizeRegime regime) {
  ExperimentConfig c = base;
  c.channel.alphabet_size = alphabet;
  c.channel.word_length = word_length;
  c.channel.regime = regime;
  if (c.channel.architecture == Architecture::instant) c.agents.hidden = 0;
  const std::size_t n = base.sweep ? base.sweep->heatmap_candidates : 0;
  c.sweep.reset();
  c.eval_candidates.clear();
  if (n) c.eval_candidates.push_back(n);
  c.name = base.name + "/v" + std::to_string(alphabet) + "-w" + std::to_string(word_length) + "-" +
           std::string(to_string(regime));
  return resolve(std::move(c));
}

namespace {

std::vector<std::string> sweep_header() {
  std::vector<std::string> h = long_table_header();
  h.push_back("error");
  return h;
}

CsvTable sweep_long_table(const SweepGrid& grid) {
  CsvTable t;
  t.header = sweep_header();
  const ExperimentConfig& c = grid.config;
  for (const auto& cell : grid.cells) {
    const std::size_t n = c.sweep->heatmap_candidates;
    std::vector<std::string> row{std::string(to_string(c.game)),
                                 std::string(to_string(c.channel.mode)),
                                 std::string(to_string(c.channel.architecture)),
                                 std::to_string(cell.alphabet),
                                 std::to_string(cell.word_length),
                                 std::to_string(c.channel.message_length),
                                 std::string(to_string(cell.regime)),
                                 std::to_string(cell.seed),
                                 std::to_string(n),
                                 cell.accuracy ? format_double(*cell.accuracy) : "",
                                 cell.noum ? std::to_string(*cell.noum) : "",
                                 cell.ok ? std::to_string(cell.best_epoch) : "",
                                 cell.error};
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace

SweepGrid run_sweep(const ExperimentConfig& config, std::size_t jobs, bool write, const ProgressFn& progress) {
  if (!config.sweep) throw ConfigError("config has no sweep section");
  const SweepConfig& sw = *config.sweep;
  SweepGrid grid;
  grid.config = config;
  for (QuantizeRegime regime : sw.regimes)
    for (std::size_t v : sw.alphabet_sizes)
      for (std::size_t w : sw.word_lengths)
        for (std::uint64_t seed : config.seeds) {
          SweepCell cell;
          cell.alphabet = v;
          cell.word_length = w;
          cell.regime = regime;
          cell.seed = seed;
          grid.cells.push_back(cell);
        }
  std::mutex progress_mutex;
  std::atomic<std::size_t> finished{0};
  parallel_for(grid.cells.size(), jobs, [&](std::size_t i) {
    SweepCell& cell = grid.cells[i];
    try {
      ExperimentConfig cfg = sweep_cell_config(config, cell.alphabet, cell.word_length, cell.regime);
      cfg.eval_jobs = 1;
      const GameData data = make_game(cfg, cell.seed);
      TrainResult tr = train(data, cell.seed);
      cell.report = std::move(tr.report);
      cell.report.test = evaluate(tr.agents, data, Phase::test, cfg.eval_candidates, cell.seed, 1);
      cell.best_epoch = cell.report.best_epoch;
      cell.noum = cell.report.test.noum;
      const AccuracyPoint& p = cell.report.test.points.front();
      if (p.accuracy) {
        cell.accuracy = p.accuracy;
      } else {
        cell.ok = false;
        cell.error = p.error;
      }
    } catch (const std::exception& e) {
      cell.ok = false;
      cell.error = e.what();
    }
    const std::size_t done = ++finished;
    if (progress) {
      std::lock_guard lock(progress_mutex);
      progress("cell " + std::to_string(done) + "/" + std::to_string(grid.cells.size()) + " v=" +
               std::to_string(cell.alphabet) + " w=" + std::to_string(cell.word_length) + " " +
               std::string(to_string(cell.regime)) + " seed " + std::to_string(cell.seed) +
               (cell.ok ? "" : " failed: " + cell.error));
    }
  });
  if (write) {
    const std::filesystem::path root = run_paths(config).root;
    make_dirs(root);
    save_csv(root / "sweep.csv", sweep_long_table(grid));
    for (QuantizeRegime regime : sw.regimes) {
      const std::string tag(to_string(regime));
      save_csv(root / ("heatmap_accuracy_" + tag + ".csv"), heatmap_table(grid, regime, false));
      save_csv(root / ("heatmap_noum_" + tag + ".csv"), heatmap_table(grid, regime, true));
    }
    write_json(root / "manifest.json", {{"kind", "qcomm-sweep-manifest"},
                                        {"version", library_version()},
                                        {"started_utc", utc_now()},
                                        {"cells", grid.cells.size()},
                                        {"config", config_to_json(config)}});
  }
  return grid;
}

std::vector<std::vector<double>> heatmap(const SweepGrid& grid, QuantizeRegime regime, bool noum_values) {
  const SweepConfig& sw = *grid.config.sweep;
  std::vector<std::vector<double>> out(sw.alphabet_sizes.size(),
                                       std::vector<double>(sw.word_lengths.size(), std::numeric_limits<double>::quiet_NaN()));
  for (std::size_t a = 0; a < sw.alphabet_sizes.size(); ++a) {
    for (std::size_t w = 0; w < sw.word_lengths.size(); ++w) {
      std::vector<double> xs;
      for (const auto& cell : grid.cells) {
        if (cell.regime != regime || cell.alphabet != sw.alphabet_sizes[a] || cell.word_length != sw.word_lengths[w])
          continue;
        if (noum_values && cell.noum) xs.push_back(static_cast<double>(*cell.noum));
        if (!noum_values && cell.accuracy) xs.push_back(*cell.accuracy);
      }
      if (xs.empty()) continue;
      double m = 0.0, sd = 0.0;
      mean_std(xs, m, sd);
      out[a][w] = m;
    }
  }
  return out;
}

CsvTable heatmap_table(const SweepGrid& grid, QuantizeRegime regime, bool noum_values) {
  const SweepConfig& sw = *grid.config.sweep;
  const auto m = heatmap(grid, regime, noum_values);
  CsvTable t;
  t.header.push_back("alphabet");
  for (std::size_t w : sw.word_lengths) t.header.push_back("w" + std::to_string(w));
  for (std::size_t a = 0; a < sw.alphabet_sizes.size(); ++a) {
    std::vector<std::string> row{std::to_string(sw.alphabet_sizes[a])};
    for (double v : m[a]) row.push_back(std::isnan(v) ? "" : format_double(v));
    t.rows.push_back(std::move(row));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Comparison across runs

CsvTable comparison_table(const std::vector<MetricsReport>& reports) {
  std::vector<const MetricsReport*> order;
  for (const auto& r : reports) order.push_back(&r);
  auto key = [](const MetricsReport* r) {
    const ChannelSpec& c = r->config.channel;
    return std::make_tuple(static_cast<int>(c.mode), static_cast<int>(c.architecture), r->config.name);
  };
  std::stable_sort(order.begin(), order.end(), [&](auto* a, auto* b) { return key(a) < key(b); });
  CsvTable t;
  t.header = {"block", "comm_type", "run",  "game",      "regime", "alphabet",  "word_length",
              "message_length", "n", "mean", "std", "seeds", "noum_mean", "noum_std", "partial"};
  std::size_t block = 0;
  for (const MetricsReport* r : order) {
    ++block;
    const ChannelSpec& c = r->config.channel;
    for (const auto& a : r->accuracy) {
      t.rows.push_back({std::to_string(block),
                        comm_type_label(c.mode, c.architecture),
                        r->config.name,
                        std::string(to_string(r->config.game)),
                        c.mode == Mode::quantized ? std::string(to_string(c.regime)) : "",
                        std::to_string(c.alphabet_size),
                        std::to_string(c.word_length),
                        std::to_string(c.message_length),
                        std::to_string(a.n),
                        format_double(a.mean),
                        format_double(a.std),
                        std::to_string(a.seeds),
                        r->noum_mean ? format_double(*r->noum_mean) : "",
                        r->noum_std ? format_double(*r->noum_std) : "",
                        r->partial ? "true" : "false"});
    }
  }
  return t;
}

std::filesystem::path write_comparison(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw ConfigError("report directory '" + dir.string() + "' does not exist");
  std::vector<std::filesystem::path> files;
  for (auto it = std::filesystem::recursive_directory_iterator(dir, ec); !ec && it != std::filesystem::end(it);
       it.increment(ec)) {
    if (it->is_regular_file() && it->path().filename() == "report.json") files.push_back(it->path());
  }
  std::sort(files.begin(), files.end());
  std::vector<MetricsReport> reports;
  for (const auto& f : files) {
    const json doc = read_json(f);
    if (doc.is_object() && doc.value("kind", "") == "qcomm-report") reports.push_back(report_from_json(doc));
  }
  if (reports.empty()) throw ConfigError("no run reports found under '" + dir.string() + "'");
  const std::filesystem::path out = dir / "comparison.csv";
  save_csv(out, comparison_table(reports));
  return out;
}

}  // namespace qcomm

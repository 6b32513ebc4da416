// SPDX-License-Identifier: Apache-2.0
#include "qcomm/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "qcomm/agents.hpp"
#include "qcomm/errors.hpp"

namespace qcomm {
namespace {

using nlohmann::json;

void check_keys(const json& obj, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("unknown key '" + key + "' in " + where);
    }
  }
}

bool is_count(const json& v) { return v.is_number_integer() && v.get<std::int64_t>() >= 0; }

std::size_t get_size(const json& obj, const char* key, std::size_t fallback, const std::string& where) {
  if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
  const json& v = obj.at(key);
  if (!is_count(v)) throw ConfigError(where + "." + key + " must be a non-negative integer");
  return v.get<std::size_t>();
}

double get_double(const json& obj, const char* key, double fallback, const std::string& where) {
  if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number()) throw ConfigError(where + "." + key + " must be a number");
  return v.get<double>();
}

bool get_bool(const json& obj, const char* key, bool fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_boolean()) throw ConfigError(where + "." + key + " must be true or false");
  return v.get<bool>();
}

std::string get_string(const json& obj, const char* key, const std::string& fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_string()) throw ConfigError(where + "." + key + " must be a string");
  return v.get<std::string>();
}

template <typename T>
std::vector<T> get_uint_list(const json& obj, const char* key, std::vector<T> fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_array()) throw ConfigError(where + "." + key + " must be a list");
  std::vector<T> out;
  for (const json& e : v) {
    if (!is_count(e)) throw ConfigError(where + "." + key + " must hold non-negative integers");
    out.push_back(e.get<T>());
  }
  return out;
}

}  // namespace

std::string_view to_string(GameKind g) {
  return g == GameKind::object_referential ? "object_referential" : "object_classification";
}

GameKind parse_game(std::string_view s) {
  if (s == "object_referential") return GameKind::object_referential;
  if (s == "object_classification") return GameKind::object_classification;
  throw ConfigError("unknown game '" + std::string(s) + "' (expected object_referential or object_classification)");
}

const std::vector<std::size_t>& object_candidate_counts() {
  static const std::vector<std::size_t> counts{2, 10, 100, 500, 1000, 2000, 5000, 10000};
  return counts;
}

ExperimentConfig config_from_json(const json& doc) {
  check_keys(doc, {"schema_version", "name", "game", "world", "classes", "channel", "agents", "trainer", "eval", "seeds",
                   "sweep", "output_dir", "eval_jobs"},
             "config");
  ExperimentConfig c;
  c.schema_version = static_cast<int>(get_size(doc, "schema_version", kConfigSchemaVersion, "config"));
  if (c.schema_version != kConfigSchemaVersion) {
    throw ConfigError("unsupported schema_version " + std::to_string(c.schema_version) + " (expected " +
                      std::to_string(kConfigSchemaVersion) + ")");
  }
  c.name = get_string(doc, "name", c.name, "config");
  c.game = parse_game(get_string(doc, "game", std::string(to_string(c.game)), "config"));
  c.output_dir = get_string(doc, "output_dir", c.output_dir, "config");
  c.eval_jobs = get_size(doc, "eval_jobs", c.eval_jobs, "config");

  if (doc.contains("world")) {
    const json& w = doc.at("world");
    check_keys(w, {"num_attributes", "values_per_attribute", "split"}, "world");
    c.world.num_attributes = get_size(w, "num_attributes", c.world.num_attributes, "world");
    c.world.values_per_attribute = get_size(w, "values_per_attribute", c.world.values_per_attribute, "world");
    if (w.contains("split")) {
      const json& s = w.at("split");
      if (!s.is_array() || s.size() != 3) throw ConfigError("world.split must be a list of three fractions");
      for (std::size_t i = 0; i < 3; ++i) {
        if (!s[i].is_number()) throw ConfigError("world.split must hold numbers");
        c.world.split[i] = s[i].get<double>();
      }
    }
  }
  if (doc.contains("classes")) {
    const json& k = doc.at("classes");
    check_keys(k, {"scheme", "num_classes"}, "classes");
    c.classes.scheme = parse_class_scheme(get_string(k, "scheme", std::string(to_string(c.classes.scheme)), "classes"));
    c.classes.num_classes = get_size(k, "num_classes", c.classes.num_classes, "classes");
  }
  if (doc.contains("channel")) {
    const json& ch = doc.at("channel");
    check_keys(ch, {"mode", "architecture", "alphabet_size", "word_length", "message_length", "quantize_regime",
                    "quantizer_scheme", "gs_temperature", "gs_straight_through"},
               "channel");
    ChannelSpec& s = c.channel;
    s.mode = parse_mode(get_string(ch, "mode", std::string(to_string(s.mode)), "channel"));
    s.architecture = parse_architecture(get_string(ch, "architecture", std::string(to_string(s.architecture)), "channel"));
    s.alphabet_size = get_size(ch, "alphabet_size", s.alphabet_size, "channel");
    s.word_length = get_size(ch, "word_length", s.word_length, "channel");
    s.message_length = get_size(ch, "message_length", s.architecture == Architecture::instant ? 1 : 6, "channel");
    s.regime = parse_regime(get_string(ch, "quantize_regime", std::string(to_string(s.regime)), "channel"));
    s.scheme = parse_scheme(get_string(ch, "quantizer_scheme", std::string(to_string(s.scheme)), "channel"));
    s.gs_temperature = get_double(ch, "gs_temperature", s.gs_temperature, "channel");
    s.gs_straight_through = get_bool(ch, "gs_straight_through", s.gs_straight_through, "channel");
  }
  if (doc.contains("agents")) {
    const json& a = doc.at("agents");
    check_keys(a, {"hidden", "embedding"}, "agents");
    c.agents.hidden = get_size(a, "hidden", c.agents.hidden, "agents");
    c.agents.embedding = get_size(a, "embedding", c.agents.embedding, "agents");
  }
  if (doc.contains("trainer")) {
    const json& t = doc.at("trainer");
    check_keys(t, {"epochs", "patience", "batch_size", "learning_rate", "beta1", "beta2", "epsilon", "train_negatives",
                   "probe_candidates"},
               "trainer");
    TrainerConfig& tr = c.trainer;
    tr.epochs = get_size(t, "epochs", tr.epochs, "trainer");
    tr.patience = get_size(t, "patience", tr.patience, "trainer");
    tr.batch_size = get_size(t, "batch_size", tr.batch_size, "trainer");
    tr.learning_rate = get_double(t, "learning_rate", tr.learning_rate, "trainer");
    tr.beta1 = get_double(t, "beta1", tr.beta1, "trainer");
    tr.beta2 = get_double(t, "beta2", tr.beta2, "trainer");
    tr.epsilon = get_double(t, "epsilon", tr.epsilon, "trainer");
    tr.train_negatives = get_size(t, "train_negatives", tr.train_negatives, "trainer");
    tr.probe_candidates = get_size(t, "probe_candidates", tr.probe_candidates, "trainer");
  }
  if (doc.contains("eval")) {
    const json& e = doc.at("eval");
    check_keys(e, {"candidates"}, "eval");
    c.eval_candidates = get_uint_list<std::size_t>(e, "candidates", {}, "eval");
  }
  c.seeds = get_uint_list<std::uint64_t>(doc, "seeds", c.seeds, "config");
  if (doc.contains("sweep")) {
    const json& s = doc.at("sweep");
    check_keys(s, {"alphabet_sizes", "word_lengths", "regimes", "heatmap_candidates"}, "sweep");
    SweepConfig sw;
    sw.alphabet_sizes = get_uint_list<std::size_t>(s, "alphabet_sizes", sw.alphabet_sizes, "sweep");
    sw.word_lengths = get_uint_list<std::size_t>(s, "word_lengths", sw.word_lengths, "sweep");
    if (s.contains("regimes")) {
      if (!s.at("regimes").is_array()) throw ConfigError("sweep.regimes must be a list");
      sw.regimes.clear();
      for (const json& r : s.at("regimes")) {
        if (!r.is_string()) throw ConfigError("sweep.regimes must hold strings");
        sw.regimes.push_back(parse_regime(r.get<std::string>()));
      }
    }
    sw.heatmap_candidates = get_size(s, "heatmap_candidates", sw.heatmap_candidates, "sweep");
    c.sweep = sw;
  }
  return resolve(std::move(c));
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return config_from_json(doc);
}

std::size_t pool_size(const ExperimentConfig& c) {
  if (c.game == GameKind::object_classification) {
    return c.classes.scheme == ClassScheme::first_attribute ? c.world.values_per_attribute : c.classes.num_classes;
  }
  std::size_t n = 1;
  for (std::size_t a = 0; a < c.world.num_attributes; ++a) {
    if (n > kMaxWorldObjects / std::max<std::size_t>(1, c.world.values_per_attribute)) return kMaxWorldObjects + 1;
    n *= c.world.values_per_attribute;
  }
  return n;
}

ExperimentConfig resolve(ExperimentConfig c) {
  // World size check (throws on overflow).
  const ObjectWorld world = build_world(c.world.num_attributes, c.world.values_per_attribute);
  if (c.game == GameKind::object_classification) {
    if (c.classes.scheme == ClassScheme::first_attribute) {
      if (c.classes.num_classes != 0 && c.classes.num_classes != c.world.values_per_attribute) {
        throw ConfigError("first_attribute classes require num_classes == values_per_attribute");
      }
      c.classes.num_classes = c.world.values_per_attribute;
    }
    if (c.classes.num_classes < 2) throw ConfigError("classification needs at least two classes");
    if (c.classes.num_classes > world.object_count()) throw ConfigError("more classes than objects");
  }
  c.channel.validate();
  if (c.agents.hidden == 0) c.agents.hidden = default_hidden(c.channel);
  if (c.channel.architecture == Architecture::instant && c.agents.hidden != c.channel.word_length) {
    throw ConfigError("instant channel uses hidden == word_length");
  }
  if (c.agents.embedding == 0) throw ConfigError("agents.embedding must be positive");
  const std::size_t pool = pool_size(c);
  TrainerConfig& t = c.trainer;
  if (t.batch_size == 0) throw ConfigError("trainer.batch_size must be positive");
  if (t.patience == 0) throw ConfigError("trainer.patience must be positive");
  if (!(t.learning_rate > 0.0)) throw ConfigError("trainer.learning_rate must be positive");
  if (t.train_negatives == 0) t.train_negatives = pool - 1;
  if (t.train_negatives > pool - 1) {
    throw ConfigError("trainer.train_negatives (" + std::to_string(t.train_negatives) + ") exceeds the " +
                      std::to_string(pool - 1) + " available negatives");
  }
  if (t.probe_candidates == 0) t.probe_candidates = pool;
  if (t.probe_candidates > pool) throw ConfigError("trainer.probe_candidates exceeds the candidate pool");
  if (c.eval_candidates.empty()) {
    if (c.game == GameKind::object_referential) {
      for (std::size_t n : object_candidate_counts())
        if (n < pool) c.eval_candidates.push_back(n);
      c.eval_candidates.push_back(pool);
    } else {
      c.eval_candidates = pool > 2 ? std::vector<std::size_t>{2, pool} : std::vector<std::size_t>{pool};
    }
  }
  for (std::size_t n : c.eval_candidates)
    if (n == 0) throw ConfigError("eval.candidates must be positive");
  if (c.seeds.empty()) throw ConfigError("at least one seed is required");
  if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size()) {
    throw ConfigError("seeds must be distinct");
  }
  if (c.eval_jobs == 0) c.eval_jobs = 1;
  if (c.sweep) {
    if (c.sweep->alphabet_sizes.empty() || c.sweep->word_lengths.empty() || c.sweep->regimes.empty()) {
      throw ConfigError("sweep grid must be nonempty");
    }
    if (c.sweep->heatmap_candidates == 0) c.sweep->heatmap_candidates = pool;
  }
  return c;
}

void apply_full_scale(ExperimentConfig& c) {
  c.world.num_attributes = 4;
  c.world.values_per_attribute = 10;
  c.trainer.train_negatives = 0;
  c.trainer.probe_candidates = 0;
  c.eval_candidates.clear();
  if (c.sweep) c.sweep->heatmap_candidates = 0;
}

json config_to_json(const ExperimentConfig& c) {
  json doc;
  doc["schema_version"] = c.schema_version;
  doc["name"] = c.name;
  doc["game"] = to_string(c.game);
  doc["world"] = {{"num_attributes", c.world.num_attributes},
                  {"values_per_attribute", c.world.values_per_attribute},
                  {"split", c.world.split}};
  if (c.game == GameKind::object_classification) {
    doc["classes"] = {{"scheme", to_string(c.classes.scheme)}, {"num_classes", c.classes.num_classes}};
  }
  const ChannelSpec& s = c.channel;
  doc["channel"] = {{"mode", to_string(s.mode)},
                    {"architecture", to_string(s.architecture)},
                    {"alphabet_size", s.alphabet_size},
                    {"word_length", s.word_length},
                    {"message_length", s.message_length},
                    {"quantize_regime", to_string(s.regime)},
                    {"quantizer_scheme", to_string(s.scheme)},
                    {"gs_temperature", s.gs_temperature},
                    {"gs_straight_through", s.gs_straight_through}};
  doc["agents"] = {{"hidden", c.agents.hidden}, {"embedding", c.agents.embedding}};
  const TrainerConfig& t = c.trainer;
  doc["trainer"] = {{"epochs", t.epochs},
                    {"patience", t.patience},
                    {"batch_size", t.batch_size},
                    {"learning_rate", t.learning_rate},
                    {"beta1", t.beta1},
                    {"beta2", t.beta2},
                    {"epsilon", t.epsilon},
                    {"train_negatives", t.train_negatives},
                    {"probe_candidates", t.probe_candidates}};
  doc["eval"] = {{"candidates", c.eval_candidates}};
  doc["seeds"] = c.seeds;
  if (c.sweep) {
    json regimes = json::array();
    for (QuantizeRegime r : c.sweep->regimes) regimes.push_back(to_string(r));
    doc["sweep"] = {{"alphabet_sizes", c.sweep->alphabet_sizes},
                    {"word_lengths", c.sweep->word_lengths},
                    {"regimes", regimes},
                    {"heatmap_candidates", c.sweep->heatmap_candidates}};
  }
  doc["output_dir"] = c.output_dir;
  doc["eval_jobs"] = c.eval_jobs;
  return doc;
}

}  // namespace qcomm

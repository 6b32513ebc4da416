// SPDX-License-Identifier: Apache-2.0
#include "qcomm/world.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "qcomm/errors.hpp"

namespace qcomm {

ObjectWorld::ObjectWorld(std::size_t num_attributes, std::size_t values_per_attribute, std::size_t object_count)
    : num_attributes_(num_attributes), values_per_attribute_(values_per_attribute), object_count_(object_count) {}

std::vector<std::size_t> ObjectWorld::attributes(std::size_t object) const {
  std::vector<std::size_t> out(num_attributes_);
  for (std::size_t a = num_attributes_; a-- > 0;) {
    out[a] = object % values_per_attribute_;
    object /= values_per_attribute_;
  }
  return out;
}

std::size_t ObjectWorld::value_of(std::size_t object, std::size_t attribute) const {
  std::size_t divisor = 1;
  for (std::size_t a = attribute + 1; a < num_attributes_; ++a) divisor *= values_per_attribute_;
  return (object / divisor) % values_per_attribute_;
}

Tensor ObjectWorld::encode(std::span<const std::size_t> objects) const {
  Tensor out({objects.size(), feature_dim()}, 0.0);
  for (std::size_t i = 0; i < objects.size(); ++i) {
    if (objects[i] >= object_count_) throw ContractError("object index out of range");
    const auto attrs = attributes(objects[i]);
    for (std::size_t a = 0; a < num_attributes_; ++a) out.at(i, a * values_per_attribute_ + attrs[a]) = 1.0;
  }
  return out;
}

Tensor ObjectWorld::encode_all() const {
  std::vector<std::size_t> all(object_count_);
  std::iota(all.begin(), all.end(), std::size_t{0});
  return encode(all);
}

ObjectWorld build_world(std::size_t num_attributes, std::size_t values_per_attribute, std::size_t max_objects) {
  if (num_attributes == 0 || values_per_attribute == 0) {
    throw ConfigError("world needs at least one attribute and one value per attribute");
  }
  std::size_t count = 1;
  for (std::size_t a = 0; a < num_attributes; ++a) {
    if (count > max_objects / values_per_attribute) {
      throw ConfigError("world of " + std::to_string(values_per_attribute) + "^" + std::to_string(num_attributes) +
                        " objects exceeds the limit of " + std::to_string(max_objects));
    }
    count *= values_per_attribute;
  }
  return ObjectWorld(num_attributes, values_per_attribute, count);
}

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::train: return "train";
    case Phase::valid: return "valid";
    case Phase::test: return "test";
  }
  return "?";
}

const std::vector<std::size_t>& Split::targets(Phase p) const {
  switch (p) {
    case Phase::train: return train;
    case Phase::valid: return valid;
    case Phase::test: return test;
  }
  return test;
}

Split make_split(std::size_t num_targets, std::array<double, 3> fractions, std::size_t pool_size, Rng& rng) {
  for (double f : fractions)
    if (!(f >= 0.0)) throw ConfigError("split fractions must be non-negative");
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  const auto n = static_cast<double>(num_targets);
  const auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * n));
  const auto n_valid = static_cast<std::size_t>(std::llround(fractions[1] * n));
  if (n_train + n_valid >= num_targets || n_train == 0 || n_valid == 0) {
    throw ConfigError("split of " + std::to_string(num_targets) + " targets leaves an empty partition");
  }
  std::vector<std::size_t> order(num_targets);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(order));
  Split split;
  split.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.valid.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                     order.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
  split.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid), order.end());
  split.pool_size = pool_size;
  return split;
}

void write_split(const std::filesystem::path& path, const Split& split) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write split file " + path.string());
  for (Phase p : {Phase::train, Phase::valid, Phase::test}) {
    out << "# " << to_string(p) << "\n";
    for (std::size_t t : split.targets(p)) out << t << "\n";
  }
}

Episode make_episode(std::size_t target, std::size_t pool_size, std::size_t n, Rng& rng) {
  if (n == 0) throw ContractError("episode needs at least one candidate");
  if (target >= pool_size) throw ContractError("target outside the candidate pool");
  if (n - 1 > pool_size - 1) {
    throw ContractError("episode needs " + std::to_string(n - 1) + " distractors but the pool has only " +
                        std::to_string(pool_size - 1));
  }
  Episode ep;
  ep.target = target;
  ep.target_position = rng.below(n);
  std::vector<std::size_t> distractors = rng.choice(pool_size - 1, n - 1, true);
  ep.candidates.reserve(n);
  for (std::size_t i = 0, d = 0; i < n; ++i) {
    if (i == ep.target_position) {
      ep.candidates.push_back(target);
    } else {
      const std::size_t k = distractors[d++];
      ep.candidates.push_back(k >= target ? k + 1 : k);
    }
  }
  return ep;
}

Episode sample_episode(const Split& split, Phase phase, std::size_t n, Rng& rng) {
  const auto& targets = split.targets(phase);
  if (targets.empty()) throw ContractError("no targets in the requested phase");
  return make_episode(targets[rng.below(targets.size())], split.pool_size, n, rng);
}

ClassScheme parse_class_scheme(std::string_view s) {
  if (s == "first_attribute") return ClassScheme::first_attribute;
  if (s == "seeded_random") return ClassScheme::seeded_random;
  throw ConfigError("unknown class scheme '" + std::string(s) + "' (expected first_attribute or seeded_random)");
}

std::string_view to_string(ClassScheme s) {
  return s == ClassScheme::first_attribute ? "first_attribute" : "seeded_random";
}

ClassMap make_class_map(const ObjectWorld& world, ClassScheme scheme, std::size_t num_classes, Rng& rng) {
  ClassMap map;
  if (scheme == ClassScheme::first_attribute) {
    const std::size_t k = world.values_per_attribute();
    if (num_classes != 0 && num_classes != k) {
      throw ConfigError("first_attribute classes require num_classes == values_per_attribute (" + std::to_string(k) + ")");
    }
    if (k < 2) throw ConfigError("classification needs at least two classes");
    map.num_classes = k;
    map.label.resize(world.object_count());
    for (std::size_t o = 0; o < world.object_count(); ++o) map.label[o] = world.value_of(o, 0);
    return map;
  }
  if (num_classes < 2) throw ConfigError("classification needs at least two classes");
  if (num_classes > world.object_count()) throw ConfigError("more classes than objects");
  map.num_classes = num_classes;
  map.label.resize(world.object_count());
  constexpr int kAttempts = 100;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    Rng stream = rng.split(static_cast<std::uint64_t>(attempt));
    std::vector<bool> used(num_classes, false);
    for (auto& l : map.label) {
      l = stream.below(num_classes);
      used[l] = true;
    }
    if (std::all_of(used.begin(), used.end(), [](bool u) { return u; })) return map;
  }
  throw ConfigError("could not draw a class map that uses every label");
}

Episode make_classification_episode(std::size_t target, const ClassMap& classes, std::size_t n, Rng& rng) {
  if (target >= classes.label.size()) throw ContractError("target outside the class map");
  if (n == 0 || n > classes.num_classes) {
    throw ContractError("classification episode needs 1 <= n <= " + std::to_string(classes.num_classes) + ", got " +
                        std::to_string(n));
  }
  Episode ep = make_episode(classes.label[target], classes.num_classes, n, rng);
  ep.target = target;
  return ep;
}

Episode classification_episode(const Split& split, const ClassMap& classes, std::size_t n, Rng& rng, Phase phase) {
  const auto& targets = split.targets(phase);
  if (targets.empty()) throw ContractError("no targets in the requested phase");
  return make_classification_episode(targets[rng.below(targets.size())], classes, n, rng);
}

Tensor class_encodings(std::size_t num_classes) {
  Tensor eye({num_classes, num_classes}, 0.0);
  for (std::size_t k = 0; k < num_classes; ++k) eye.at(k, k) = 1.0;
  return eye;
}

}  // namespace qcomm

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "qcomm/rng.hpp"
#include "qcomm/tensor.hpp"

namespace qcomm {

/// All tuples of `num_attributes` values drawn from a shared set of
/// `values_per_attribute` values, enumerated lexicographically (attribute 0
/// most significant). Objects are encoded as concatenated one-hot vectors.
class ObjectWorld {
 public:
  ObjectWorld(std::size_t num_attributes, std::size_t values_per_attribute, std::size_t object_count);

  std::size_t num_attributes() const { return num_attributes_; }
  std::size_t values_per_attribute() const { return values_per_attribute_; }
  std::size_t object_count() const { return object_count_; }
  std::size_t feature_dim() const { return num_attributes_ * values_per_attribute_; }

  std::vector<std::size_t> attributes(std::size_t object) const;
  std::size_t value_of(std::size_t object, std::size_t attribute) const;

  /// [objects.size() x feature_dim] one-hot encodings.
  Tensor encode(std::span<const std::size_t> objects) const;
  Tensor encode_all() const;

 private:
  std::size_t num_attributes_;
  std::size_t values_per_attribute_;
  std::size_t object_count_;
};

inline constexpr std::size_t kMaxWorldObjects = 10'000'000;

ObjectWorld build_world(std::size_t num_attributes, std::size_t values_per_attribute,
                        std::size_t max_objects = kMaxWorldObjects);

enum class Phase { train, valid, test };
std::string_view to_string(Phase p);

/// Disjoint target lists plus a candidate pool [0, pool_size) shared by every split.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> valid;
  std::vector<std::size_t> test;
  std::size_t pool_size = 0;

  const std::vector<std::size_t>& targets(Phase p) const;
};

/// Seeded permutation of [0, num_targets) partitioned by `fractions` (train, valid, test).
Split make_split(std::size_t num_targets, std::array<double, 3> fractions, std::size_t pool_size, Rng& rng);

void write_split(const std::filesystem::path& path, const Split& split);

struct Episode {
  std::size_t target = 0;
  std::vector<std::size_t> candidates;
  std::size_t target_position = 0;
};

/// Episode for a given target: `n - 1` distinct distractors drawn uniformly from
/// [0, pool_size) without the target, target inserted at a uniform position.
Episode make_episode(std::size_t target, std::size_t pool_size, std::size_t n, Rng& rng);

/// Episode whose target is drawn uniformly from the phase's target list.
Episode sample_episode(const Split& split, Phase phase, std::size_t n, Rng& rng);

enum class ClassScheme { first_attribute, seeded_random };
ClassScheme parse_class_scheme(std::string_view s);
std::string_view to_string(ClassScheme s);

/// Many-to-one map from objects to class labels.
struct ClassMap {
  std::vector<std::size_t> label;
  std::size_t num_classes = 0;
};

/// first_attribute forces num_classes = values_per_attribute (pass 0 or that value).
/// seeded_random redraws until every label is used.
ClassMap make_class_map(const ObjectWorld& world, ClassScheme scheme, std::size_t num_classes, Rng& rng);

/// Receiver candidates are class labels: the target's class plus n - 1 other classes.
/// `Episode::target` holds the sender's target object.
Episode make_classification_episode(std::size_t target, const ClassMap& classes, std::size_t n, Rng& rng);
Episode classification_episode(const Split& split, const ClassMap& classes, std::size_t n, Rng& rng, Phase phase);

/// Identity matrix [K x K]: the receiver-side encoding of class candidates.
Tensor class_encodings(std::size_t num_classes);

}  // namespace qcomm

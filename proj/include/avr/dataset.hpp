#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "avr/geometry.hpp"
#include "avr/numerics.hpp"

namespace avr {

class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(std::vector<std::string> object_labels, std::vector<std::string> predicate_labels);

  const std::vector<std::string>& objects() const { return objects_; }
  const std::vector<std::string>& predicates() const { return predicates_; }
  std::size_t num_objects() const { return objects_.size(); }
  std::size_t num_predicates() const { return predicates_.size(); }

  std::optional<std::size_t> object_index(const std::string& label) const;
  std::optional<std::size_t> predicate_index(const std::string& label) const;

  /// Stable hash over both label lists, used to pair checkpoints and priors
  /// with the dataset they were built from.
  std::uint64_t hash() const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.objects_ == b.objects_ && a.predicates_ == b.predicates_;
  }

 private:
  std::vector<std::string> objects_;
  std::vector<std::string> predicates_;
  std::unordered_map<std::string, std::size_t> object_lookup_;
  std::unordered_map<std::string, std::size_t> predicate_lookup_;
};

struct DetectedObject {
  BoundingBox box;
  std::size_t class_index;
  double confidence = 1.0;

  friend bool operator==(const DetectedObject&, const DetectedObject&) = default;
};

struct Relationship {
  std::size_t subject;
  std::size_t predicate;
  std::size_t object;

  friend bool operator==(const Relationship&, const Relationship&) = default;
};

struct AnnotatedImage {
  std::string image_id;
  ImageDims dims;
  std::vector<DetectedObject> objects;
  std::vector<Relationship> relationships;
  std::optional<std::vector<DetectedObject>> detections;

  friend bool operator==(const AnnotatedImage&, const AnnotatedImage&) = default;
};

struct Dataset {
  Vocabulary vocab;
  std::vector<AnnotatedImage> images;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Checks every index invariant; throws DataError on the first violation.
void validate(const Dataset& dataset);

Dataset parse_annotations(const std::string& text);
Dataset load_annotations(const std::string& path);
std::string format_annotations(const Dataset& dataset);
void save_annotations(const std::string& path, const Dataset& dataset);

struct EmbeddingTable {
  std::size_t dimension = 0;
  std::map<std::string, Vector> vectors;

  /// Throws DataError when the label has no vector.
  const Vector& at(const std::string& label) const;

  friend bool operator==(const EmbeddingTable&, const EmbeddingTable&) = default;
};

/// Reads GloVe-style text and resolves every object label of `vocab`.
/// Multi-word labels get the mean of their token vectors.
EmbeddingTable parse_embeddings(const std::string& text, const Vocabulary& vocab);
EmbeddingTable load_embeddings(const std::string& path, const Vocabulary& vocab);
/// Writes one "label v1 ... vd" line per entry; labels must be single tokens.
std::string format_embeddings(const EmbeddingTable& table);
void save_embeddings(const std::string& path, const EmbeddingTable& table);

/// Which object list a pair's indices refer to.
enum class PairSource : std::uint8_t { kGroundTruth = 0, kDetection = 1 };

struct PairKey {
  PairSource source;
  std::uint32_t subject;
  std::uint32_t object;

  friend auto operator<=>(const PairKey&, const PairKey&) = default;
};

struct ImageFeatures {
  std::vector<float> global;
  std::map<PairKey, std::vector<float>> pairs;

  friend bool operator==(const ImageFeatures&, const ImageFeatures&) = default;
};

/// Externally produced visual features: F_a per image and F_v per ordered pair.
struct FeatureBundle {
  std::size_t visual_dim = 0;
  std::size_t global_dim = 0;
  std::map<std::string, ImageFeatures> images;

  const ImageFeatures& image(const std::string& image_id) const;
  const std::vector<float>& pair(const std::string& image_id, PairKey key) const;

  friend bool operator==(const FeatureBundle&, const FeatureBundle&) = default;
};

std::string serialize_features(const FeatureBundle& bundle);
FeatureBundle deserialize_features(const std::string& bytes);
void save_features(const std::string& path, const FeatureBundle& bundle);
FeatureBundle load_features(const std::string& path);

enum class SynthRule {
  /// Predicate is the direction sector of the subject-to-object offset.
  kSpatialOnly,
  /// 30% of ordered pairs are annotated; the rest are distractors whose
  /// visual features still carry a confident but meaningless predicate.
  kSalient,
  /// Predicate is a fixed function of the (subject, object) label pair, with
  /// only a weak visual trace.
  kPairPrior,
};

SynthRule parse_synth_rule(const std::string& name);
std::string synth_rule_name(SynthRule rule);

struct SynthConfig {
  std::uint64_t seed = 0;
  std::size_t n_images = 0;
  std::size_t num_objects = 6;
  std::size_t num_predicates = 4;
  SynthRule rule = SynthRule::kSpatialOnly;
  std::size_t visual_dim = 32;
  std::size_t global_dim = 16;
  std::size_t embedding_dim = 50;
  std::size_t min_objects_per_image = 4;
  std::size_t max_objects_per_image = 6;
  /// Upper bound on annotated relationships per image (spatial-only, pair-prior).
  std::size_t max_relationships = 8;
  /// Fraction of ordered pairs annotated (salient, pair-prior).
  double annotated_fraction = 0.3;
  /// Probability that a pair-prior annotation ignores the planted table.
  double label_noise = 0.1;
};

struct SynthDataset {
  Dataset dataset;
  FeatureBundle features;
  EmbeddingTable embeddings;

  friend bool operator==(const SynthDataset&, const SynthDataset&) = default;
};

/// Pure function of its configuration.
SynthDataset synth_dataset(const SynthConfig& config);

/// Splits off the last `n_test` images (and their features) as a held-out set.
std::pair<SynthDataset, SynthDataset> split_dataset(const SynthDataset& data, std::size_t n_test);

}  // namespace avr

#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "avr/dataset.hpp"
#include "avr/model.hpp"
#include "avr/prior_graph.hpp"

namespace avr {

/// Which optional factors of the final score are active.
struct ScoringMode {
  bool attention = false;
  bool prior = false;

  friend bool operator==(const ScoringMode&, const ScoringMode&) = default;
};

/// Accepts "baseline", "prior", "attention" and "prior+attention".
ScoringMode parse_mode(const std::string& name);
std::string mode_name(ScoringMode mode);

/// Factors of the relationship score. Disabled factors hold 1.
struct ScoreComponents {
  double attention = 1.0;
  double subject_confidence = 1.0;
  double object_confidence = 1.0;
  double predicate = 1.0;
  double prior = 1.0;

  friend bool operator==(const ScoreComponents&, const ScoreComponents&) = default;
};

struct ScoredRelationship {
  std::size_t subject_index;
  std::size_t object_index;
  DetectedObject subject;
  DetectedObject object;
  std::size_t predicate_index;
  ScoreComponents components;
  /// Sum of component logs; a zero component gives -inf.
  double log_score;

  double final_score() const { return std::exp(log_score); }

  friend bool operator==(const ScoredRelationship&, const ScoredRelationship&) = default;
};

struct PredictionSet {
  std::string image_id;
  std::vector<ScoredRelationship> relationships;
  ScoringMode mode;

  friend bool operator==(const PredictionSet&, const PredictionSet&) = default;
};

/// Everything score_pair needs for one ordered pair.
struct PairScoreInputs {
  std::size_t subject_index;
  std::size_t object_index;
  DetectedObject subject;
  DetectedObject object;
  /// Normalized attention of the pair within its image.
  double attention = 1.0;
  /// Pr(P | C_s, C_o, O_s, O_o) over all K predicates.
  Vector predicate_probs;
  /// Prior factor per predicate; required when the prior is enabled.
  std::optional<Vector> prior;
};

/// One scored relationship per predicate: the Bayesian chain product,
/// times the prior when enabled.
std::vector<ScoredRelationship> score_pair(const PairScoreInputs& inputs, ScoringMode mode);

/// Descending score, then ascending (subject, object, predicate).
bool ranks_before(const ScoredRelationship& a, const ScoredRelationship& b);

/// Keeps each (subject, object) pair's `per_pair_k` best predicates and sorts
/// the survivors globally.
PredictionSet rank_image(std::string image_id, std::vector<ScoredRelationship> scored,
                         ScoringMode mode, std::size_t per_pair_k);

struct InferenceOptions {
  ScoringMode mode;
  std::size_t per_pair_k = 1;
  /// Detections kept per image, highest confidence first (0 keeps all).
  std::size_t max_detections = 0;
  /// Use a prior factor of 1 for predicates whose prior row is empty,
  /// instead of zeroing their scores.
  bool bypass_zero_prior_rows = false;
};

/// Runs the trained heads, the prior and the ranking over images.
class Predictor {
 public:
  /// All references must outlive the predictor. `prior` may be null when the
  /// prior mode is off.
  Predictor(const RelationshipModel& model, const EmbeddingTable& embeddings,
            const Vocabulary& vocab, const PriorModel* prior, InferenceOptions options);

  /// Ground-truth pairs of annotated relationships, confidences fixed to 1 and
  /// no attention factor.
  PredictionSet predicate_detection(const AnnotatedImage& image,
                                    const FeatureBundle& features) const;

  /// All ordered pairs of the image's detections (for phrase and
  /// relationship detection).
  PredictionSet relationship_detection(const AnnotatedImage& image,
                                       const FeatureBundle& features) const;

  const InferenceOptions& options() const { return options_; }

 private:
  struct Candidate {
    std::size_t subject_index;
    std::size_t object_index;
    DetectedObject subject;
    DetectedObject object;
    PairSource source;
  };

  PredictionSet score_candidates(const AnnotatedImage& image, const FeatureBundle& features,
                                 const std::vector<Candidate>& candidates,
                                 ScoringMode mode) const;
  Vector prior_factors(std::size_t subject_class, std::size_t object_class) const;

  const RelationshipModel& model_;
  const EmbeddingTable& embeddings_;
  const Vocabulary& vocab_;
  const PriorModel* prior_;
  InferenceOptions options_;
};

/// Predictions that restate the image's ground truth, each with score 1.
PredictionSet echo_ground_truth(const AnnotatedImage& image);

struct PredictionFile {
  std::string task;
  ScoringMode mode;
  std::size_t per_pair_k = 1;
  std::vector<PredictionSet> images;

  friend bool operator==(const PredictionFile&, const PredictionFile&) = default;
};

/// Tab-separated text, see docs/formats.md.
std::string format_predictions(const PredictionFile& file, const Vocabulary& vocab);
PredictionFile parse_predictions(const std::string& text, const Vocabulary& vocab);

}  // namespace avr

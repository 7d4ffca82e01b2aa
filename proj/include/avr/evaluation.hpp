#pragma once

#include <string>
#include <vector>

#include "avr/dataset.hpp"
#include "avr/inference.hpp"

namespace avr {

enum class Task { kPredicate, kPhrase, kRelationship };

Task parse_task(const std::string& name);
std::string task_name(Task task);

struct GroundTruthTriplet {
  BoundingBox subject_box;
  std::size_t subject_label;
  BoundingBox object_box;
  std::size_t object_label;
  std::size_t predicate;
};

/// One target per annotated relationship instance.
std::vector<GroundTruthTriplet> ground_truth_triplets(const AnnotatedImage& image);

bool labels_match(const ScoredRelationship& pred, const GroundTruthTriplet& gt);

/// Labels match and the union boxes overlap by at least `threshold`.
bool match_phrase(const ScoredRelationship& pred, const GroundTruthTriplet& gt,
                  double threshold = 0.5);

/// Labels match and subject and object boxes each overlap by at least `threshold`.
bool match_relationship(const ScoredRelationship& pred, const GroundTruthTriplet& gt,
                        double threshold = 0.5);

enum class Aggregation { kMicro, kMacro };

struct EvalConfig {
  Task task = Task::kRelationship;
  std::vector<std::size_t> n_values{50, 100};
  /// Recorded in the report; truncation itself happens in rank_image.
  std::size_t per_pair_k = 1;
  double iou_threshold = 0.5;
  Aggregation aggregation = Aggregation::kMicro;
};

struct Match {
  std::size_t prediction_rank;
  std::size_t ground_truth_index;
  double overlap;
};

struct ImageMatches {
  std::string image_id;
  std::size_t n;
  std::size_t ground_truth_count;
  std::vector<Match> matches;
};

/// Greedy matching of the top `n` predictions in rank order. Each prediction
/// takes the unmatched matchable ground truth with the highest overlap
/// (lowest index on ties).
ImageMatches match_image(const PredictionSet& predictions,
                         const std::vector<GroundTruthTriplet>& ground_truth, Task task,
                         std::size_t n, double threshold);

struct RecallRow {
  Task task;
  std::size_t per_pair_k;
  std::size_t n;
  double recall;
  std::size_t matched;
  std::size_t total;
};

struct EvalReport {
  std::vector<RecallRow> rows;
  std::vector<ImageMatches> diagnostics;

  double recall(std::size_t n) const;
};

/// `predictions` are matched to images by image_id; images without an entry
/// contribute misses.
EvalReport recall_at_n(const std::vector<PredictionSet>& predictions,
                       const std::vector<AnnotatedImage>& images, const EvalConfig& config);

/// Tab-separated table, one row per (task, K, N).
std::string format_report(const EvalReport& report);
/// Per-image match lists.
std::string format_diagnostics(const EvalReport& report);

}  // namespace avr

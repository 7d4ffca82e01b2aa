#include "avr/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

#include "avr/io_util.hpp"

namespace avr {

Task parse_task(const std::string& name) {
  if (name == "predicate") return Task::kPredicate;
  if (name == "phrase") return Task::kPhrase;
  if (name == "relationship") return Task::kRelationship;
  throw std::invalid_argument("unknown task '" + name +
                              "' (expected predicate, phrase or relationship)");
}

std::string task_name(Task task) {
  switch (task) {
    case Task::kPredicate:
      return "predicate";
    case Task::kPhrase:
      return "phrase";
    case Task::kRelationship:
      return "relationship";
  }
  return "unknown";
}

std::vector<GroundTruthTriplet> ground_truth_triplets(const AnnotatedImage& image) {
  std::vector<GroundTruthTriplet> out;
  out.reserve(image.relationships.size());
  for (const auto& rel : image.relationships) {
    const auto& s = image.objects.at(rel.subject);
    const auto& o = image.objects.at(rel.object);
    out.push_back(GroundTruthTriplet{s.box, s.class_index, o.box, o.class_index, rel.predicate});
  }
  return out;
}

bool labels_match(const ScoredRelationship& pred, const GroundTruthTriplet& gt) {
  return pred.subject.class_index == gt.subject_label &&
         pred.object.class_index == gt.object_label && pred.predicate_index == gt.predicate;
}

namespace {

double phrase_overlap(const ScoredRelationship& pred, const GroundTruthTriplet& gt) {
  return iou(union_box(pred.subject.box, pred.object.box), union_box(gt.subject_box, gt.object_box));
}

double relationship_overlap(const ScoredRelationship& pred, const GroundTruthTriplet& gt) {
  return std::min(iou(pred.subject.box, gt.subject_box), iou(pred.object.box, gt.object_box));
}

/// Overlap used for matching, or a negative value when the pair cannot match.
double match_overlap(const ScoredRelationship& pred, const GroundTruthTriplet& gt, Task task,
                     double threshold) {
  if (!labels_match(pred, gt)) return -1.0;
  const double ov = task == Task::kPhrase ? phrase_overlap(pred, gt) : relationship_overlap(pred, gt);
  return ov >= threshold ? ov : -1.0;
}

}  // namespace

bool match_phrase(const ScoredRelationship& pred, const GroundTruthTriplet& gt, double threshold) {
  return labels_match(pred, gt) && phrase_overlap(pred, gt) >= threshold;
}

bool match_relationship(const ScoredRelationship& pred, const GroundTruthTriplet& gt,
                        double threshold) {
  return labels_match(pred, gt) && iou(pred.subject.box, gt.subject_box) >= threshold &&
         iou(pred.object.box, gt.object_box) >= threshold;
}

ImageMatches match_image(const PredictionSet& predictions,
                         const std::vector<GroundTruthTriplet>& ground_truth, Task task,
                         std::size_t n, double threshold) {
  if (n < 1) throw std::invalid_argument("Rec@N needs N >= 1");
  ImageMatches out{predictions.image_id, n, ground_truth.size(), {}};
  std::vector<bool> taken(ground_truth.size(), false);
  const std::size_t top = std::min(n, predictions.relationships.size());
  for (std::size_t rank = 0; rank < top; ++rank) {
    const auto& pred = predictions.relationships[rank];
    double best = -1.0;
    std::size_t best_idx = 0;
    for (std::size_t g = 0; g < ground_truth.size(); ++g) {
      if (taken[g]) continue;
      const double ov = match_overlap(pred, ground_truth[g], task, threshold);
      if (ov > best) {
        best = ov;
        best_idx = g;
      }
    }
    if (best >= 0.0) {
      taken[best_idx] = true;
      out.matches.push_back(Match{rank, best_idx, best});
    }
  }
  return out;
}

double EvalReport::recall(std::size_t n) const {
  for (const auto& row : rows) {
    if (row.n == n) return row.recall;
  }
  throw std::out_of_range("report has no row for N=" + std::to_string(n));
}

EvalReport recall_at_n(const std::vector<PredictionSet>& predictions,
                       const std::vector<AnnotatedImage>& images, const EvalConfig& config) {
  if (config.n_values.empty()) throw std::invalid_argument("no N values to evaluate");
  for (std::size_t i = 0; i < config.n_values.size(); ++i) {
    if (config.n_values[i] < 1) throw std::invalid_argument("Rec@N needs N >= 1");
    if (i > 0 && config.n_values[i] <= config.n_values[i - 1]) {
      throw std::invalid_argument("N values must be strictly ascending");
    }
  }
  if (!(config.iou_threshold > 0.0) || config.iou_threshold > 1.0) {
    throw std::invalid_argument("IoU threshold must lie in (0, 1]");
  }
  std::map<std::string, const PredictionSet*> by_id;
  for (const auto& p : predictions) by_id[p.image_id] = &p;

  EvalReport report;
  for (const std::size_t n : config.n_values) {
    std::size_t matched = 0;
    std::size_t total = 0;
    double macro_sum = 0.0;
    std::size_t macro_images = 0;
    for (const auto& img : images) {
      const auto gt = ground_truth_triplets(img);
      auto it = by_id.find(img.image_id);
      const PredictionSet empty{img.image_id, {}, {}};
      auto m = match_image(it == by_id.end() ? empty : *it->second, gt, config.task, n,
                           config.iou_threshold);
      matched += m.matches.size();
      total += gt.size();
      if (!gt.empty()) {
        macro_sum += static_cast<double>(m.matches.size()) / static_cast<double>(gt.size());
        ++macro_images;
      }
      report.diagnostics.push_back(std::move(m));
    }
    double recall = 0.0;
    if (config.aggregation == Aggregation::kMicro) {
      recall = total == 0 ? 0.0 : static_cast<double>(matched) / static_cast<double>(total);
    } else {
      recall = macro_images == 0 ? 0.0 : macro_sum / static_cast<double>(macro_images);
    }
    report.rows.push_back(RecallRow{config.task, config.per_pair_k, n, recall, matched, total});
  }
  return report;
}

std::string format_report(const EvalReport& report) {
  std::ostringstream out;
  out << "task\tK\tN\trecall\tmatched\ttotal\n";
  for (const auto& row : report.rows) {
    char pct[32];
    std::snprintf(pct, sizeof(pct), "%.4f", row.recall);
    out << task_name(row.task) << '\t' << row.per_pair_k << '\t' << row.n << '\t' << pct << '\t'
        << row.matched << '\t' << row.total << '\n';
  }
  return out.str();
}

std::string format_diagnostics(const EvalReport& report) {
  std::ostringstream out;
  out << "image\tN\tground_truth\tmatched\tmatches(rank:gt:overlap)\n";
  for (const auto& m : report.diagnostics) {
    out << m.image_id << '\t' << m.n << '\t' << m.ground_truth_count << '\t' << m.matches.size()
        << '\t';
    for (std::size_t i = 0; i < m.matches.size(); ++i) {
      if (i) out << ' ';
      out << m.matches[i].prediction_rank << ':' << m.matches[i].ground_truth_index << ':'
          << io::format_double(m.matches[i].overlap);
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace avr

#include "avr/inference.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "avr/error.hpp"
#include "avr/io_util.hpp"

namespace avr {

namespace {

constexpr std::string_view kPredictionHeader = "avr-predictions";
constexpr std::uint64_t kPredictionVersion = 1;

double safe_log(double v) {
  return v > 0.0 ? std::log(v) : -std::numeric_limits<double>::infinity();
}

}  // namespace

ScoringMode parse_mode(const std::string& name) {
  if (name == "baseline") return {false, false};
  if (name == "prior") return {false, true};
  if (name == "attention") return {true, false};
  if (name == "prior+attention" || name == "attention+prior") return {true, true};
  throw std::invalid_argument("unknown mode '" + name +
                              "' (expected baseline, prior, attention or prior+attention)");
}

std::string mode_name(ScoringMode mode) {
  if (mode.attention && mode.prior) return "prior+attention";
  if (mode.attention) return "attention";
  if (mode.prior) return "prior";
  return "baseline";
}

std::vector<ScoredRelationship> score_pair(const PairScoreInputs& in, ScoringMode mode) {
  const std::size_t k = in.predicate_probs.size();
  if (mode.prior && (!in.prior || in.prior->size() != k)) {
    throw std::invalid_argument("prior mode needs one prior factor per predicate");
  }
  std::vector<ScoredRelationship> out;
  out.reserve(k);
  for (std::size_t p = 0; p < k; ++p) {
    ScoreComponents c;
    c.attention = mode.attention ? in.attention : 1.0;
    c.subject_confidence = in.subject.confidence;
    c.object_confidence = in.object.confidence;
    c.predicate = in.predicate_probs[p];
    c.prior = mode.prior ? (*in.prior)[p] : 1.0;
    const double log_score = safe_log(c.attention) + safe_log(c.subject_confidence) +
                             safe_log(c.object_confidence) + safe_log(c.predicate) +
                             safe_log(c.prior);
    out.push_back(ScoredRelationship{in.subject_index, in.object_index, in.subject, in.object, p,
                                     c, log_score});
  }
  return out;
}

bool ranks_before(const ScoredRelationship& a, const ScoredRelationship& b) {
  if (a.log_score != b.log_score) return a.log_score > b.log_score;
  return std::tie(a.subject_index, a.object_index, a.predicate_index) <
         std::tie(b.subject_index, b.object_index, b.predicate_index);
}

PredictionSet rank_image(std::string image_id, std::vector<ScoredRelationship> scored,
                         ScoringMode mode, std::size_t per_pair_k) {
  if (per_pair_k == 0) {
    throw std::invalid_argument("per_pair_k must be at least 1");
  }
  std::map<std::pair<std::size_t, std::size_t>, std::vector<ScoredRelationship>> groups;
  for (auto& r : scored) groups[{r.subject_index, r.object_index}].push_back(std::move(r));

  PredictionSet out{std::move(image_id), {}, mode};
  for (auto& [_, group] : groups) {
    std::sort(group.begin(), group.end(), ranks_before);
    const auto keep = std::min(per_pair_k, group.size());
    out.relationships.insert(out.relationships.end(), group.begin(),
                             group.begin() + static_cast<std::ptrdiff_t>(keep));
  }
  std::sort(out.relationships.begin(), out.relationships.end(), ranks_before);
  return out;
}

Predictor::Predictor(const RelationshipModel& model, const EmbeddingTable& embeddings,
                     const Vocabulary& vocab, const PriorModel* prior, InferenceOptions options)
    : model_(model), embeddings_(embeddings), vocab_(vocab), prior_(prior), options_(options) {
  if (options_.mode.prior) {
    if (prior_ == nullptr) {
      throw std::invalid_argument("prior mode requested without a prior model");
    }
    if (prior_->vocab_hash != vocab_.hash()) {
      throw DataError("prior was built for a different vocabulary");
    }
  }
  if (options_.per_pair_k == 0) {
    throw std::invalid_argument("per_pair_k must be at least 1");
  }
}

Vector Predictor::prior_factors(std::size_t cs, std::size_t co) const {
  Vector out(vocab_.num_predicates());
  for (std::size_t p = 0; p < out.size(); ++p) {
    if (options_.bypass_zero_prior_rows && prior_->is_zero_row(p)) {
      out[p] = 1.0;
    } else {
      out[p] = prior_->value(p, cs, co);
    }
  }
  return out;
}

PredictionSet Predictor::score_candidates(const AnnotatedImage& image,
                                          const FeatureBundle& features,
                                          const std::vector<Candidate>& candidates,
                                          ScoringMode mode) const {
  const auto& img_features = features.image(image.image_id);
  const Vector global(img_features.global.begin(), img_features.global.end());

  std::vector<PairScoreInputs> inputs;
  std::vector<double> raw_attention;
  inputs.reserve(candidates.size());
  for (const auto& c : candidates) {
    const auto& fv_f = features.pair(
        image.image_id, PairKey{c.source, static_cast<std::uint32_t>(c.subject_index),
                                static_cast<std::uint32_t>(c.object_index)});
    const Vector visual(fv_f.begin(), fv_f.end());
    const auto spatial = spatial_feature(c.subject.box, c.object.box, image.dims);
    const auto& es = embeddings_.at(vocab_.objects().at(c.subject.class_index));
    const auto& eo = embeddings_.at(vocab_.objects().at(c.object.class_index));
    const Vector semantic = model_.predicate.semantic_feature(es, eo, model_.params);

    PairScoreInputs in{c.subject_index, c.object_index, c.subject, c.object, 1.0,
                       model_.predicate.predict(visual, spatial, semantic, model_.params),
                       std::nullopt};
    if (mode.prior) in.prior = prior_factors(c.subject.class_index, c.object.class_index);
    if (mode.attention) {
      const Vector fused = model_.attention.fuse_visual_global(visual, global, model_.params);
      raw_attention.push_back(
          model_.attention.attention_score(fused, spatial, semantic, model_.params));
    }
    inputs.push_back(std::move(in));
  }
  if (mode.attention && !inputs.empty()) {
    const Vector normalized = normalize_attention(raw_attention);
    for (std::size_t i = 0; i < inputs.size(); ++i) inputs[i].attention = normalized[i];
  }
  std::vector<ScoredRelationship> scored;
  for (const auto& in : inputs) {
    auto rels = score_pair(in, mode);
    scored.insert(scored.end(), rels.begin(), rels.end());
  }
  return rank_image(image.image_id, std::move(scored), mode, options_.per_pair_k);
}

PredictionSet Predictor::predicate_detection(const AnnotatedImage& image,
                                             const FeatureBundle& features) const {
  std::vector<Candidate> candidates;
  std::vector<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& rel : image.relationships) {
    const std::pair key{rel.subject, rel.object};
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) continue;
    seen.push_back(key);
    DetectedObject s = image.objects.at(rel.subject);
    DetectedObject o = image.objects.at(rel.object);
    s.confidence = 1.0;
    o.confidence = 1.0;
    candidates.push_back({rel.subject, rel.object, s, o, PairSource::kGroundTruth});
  }
  ScoringMode mode = options_.mode;
  mode.attention = false;
  return score_candidates(image, features, candidates, mode);
}

PredictionSet Predictor::relationship_detection(const AnnotatedImage& image,
                                                const FeatureBundle& features) const {
  if (!image.detections) {
    throw DataError("image '" + image.image_id + "' has no detections");
  }
  const auto& dets = *image.detections;
  std::vector<std::size_t> keep(dets.size());
  for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = i;
  if (options_.max_detections > 0 && keep.size() > options_.max_detections) {
    std::stable_sort(keep.begin(), keep.end(), [&](std::size_t a, std::size_t b) {
      return dets[a].confidence > dets[b].confidence;
    });
    keep.resize(options_.max_detections);
    std::sort(keep.begin(), keep.end());
  }
  std::vector<Candidate> candidates;
  for (auto s : keep) {
    for (auto o : keep) {
      if (s != o) candidates.push_back({s, o, dets[s], dets[o], PairSource::kDetection});
    }
  }
  return score_candidates(image, features, candidates, options_.mode);
}

PredictionSet echo_ground_truth(const AnnotatedImage& image) {
  PredictionSet out{image.image_id, {}, ScoringMode{}};
  for (const auto& rel : image.relationships) {
    out.relationships.push_back(ScoredRelationship{rel.subject, rel.object,
                                                   image.objects.at(rel.subject),
                                                   image.objects.at(rel.object), rel.predicate,
                                                   ScoreComponents{}, 0.0});
  }
  return out;
}

std::string format_predictions(const PredictionFile& file, const Vocabulary& vocab) {
  std::ostringstream out;
  out << kPredictionHeader << '\t' << kPredictionVersion << '\n';
  out << "task\t" << file.task << '\n';
  out << "mode\t" << mode_name(file.mode) << '\n';
  out << "per_pair_k\t" << file.per_pair_k << '\n';
  out << "images\t" << file.images.size() << '\n';
  auto box = [&](const DetectedObject& d) {
    out << io::format_double(d.box.x()) << '\t' << io::format_double(d.box.y()) << '\t'
        << io::format_double(d.box.w()) << '\t' << io::format_double(d.box.h()) << '\t'
        << vocab.objects().at(d.class_index) << '\t' << io::format_double(d.confidence);
  };
  for (const auto& set : file.images) {
    out << "image\t" << set.image_id << '\t' << set.relationships.size() << '\n';
    for (const auto& r : set.relationships) {
      out << r.subject_index << '\t';
      box(r.subject);
      out << '\t' << r.object_index << '\t';
      box(r.object);
      const auto& c = r.components;
      out << '\t' << vocab.predicates().at(r.predicate_index) << '\t'
          << io::format_double(r.final_score()) << '\t' << io::format_double(r.log_score)
          << '\t' << io::format_double(c.attention) << '\t'
          << io::format_double(c.subject_confidence) << '\t'
          << io::format_double(c.object_confidence) << '\t' << io::format_double(c.predicate)
          << '\t' << io::format_double(c.prior) << '\n';
    }
  }
  return out.str();
}

PredictionFile parse_predictions(const std::string& text, const Vocabulary& vocab) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& msg) -> DataError {
    return DataError("predictions line " + std::to_string(line_no) + ": " + msg);
  };
  auto next = [&](std::string_view keyword, std::size_t n_fields) {
    if (!std::getline(in, line)) throw fail("truncated, expected '" + std::string(keyword) + "'");
    ++line_no;
    auto f = io::split_tabs(line);
    if (f.size() != n_fields || f[0] != keyword) {
      throw fail("expected '" + std::string(keyword) + "'");
    }
    return f;
  };
  PredictionFile file;
  if (io::parse_u64(next(kPredictionHeader, 2)[1], "version") != kPredictionVersion) {
    throw fail("unsupported predictions version");
  }
  file.task = std::string(next("task", 2)[1]);
  try {
    file.mode = parse_mode(std::string(next("mode", 2)[1]));
  } catch (const std::invalid_argument& e) {
    throw fail(e.what());
  }
  file.per_pair_k = io::parse_u64(next("per_pair_k", 2)[1], "per_pair_k");
  const auto n_images = io::parse_u64(next("images", 2)[1], "images");

  auto label = [&](std::string_view name) {
    auto idx = vocab.object_index(std::string(name));
    if (!idx) throw fail("unknown object label '" + std::string(name) + "'");
    return *idx;
  };
  auto object = [&](const std::vector<std::string_view>& f, std::size_t at) {
    try {
      return DetectedObject{BoundingBox(io::parse_double(f[at], "x"), io::parse_double(f[at + 1], "y"),
                                        io::parse_double(f[at + 2], "w"),
                                        io::parse_double(f[at + 3], "h")),
                            label(f[at + 4]), io::parse_double(f[at + 5], "confidence")};
    } catch (const std::invalid_argument& e) {
      throw fail(e.what());
    }
  };
  for (std::uint64_t i = 0; i < n_images; ++i) {
    auto head = next("image", 3);
    PredictionSet set{std::string(head[1]), {}, file.mode};
    const auto count = io::parse_u64(head[2], "relationship count");
    for (std::uint64_t r = 0; r < count; ++r) {
      if (!std::getline(in, line)) throw fail("truncated inside image '" + set.image_id + "'");
      ++line_no;
      auto f = io::split_tabs(line);
      if (f.size() != 22) throw fail("relationship record needs 22 tab-separated fields");
      auto pred = vocab.predicate_index(std::string(f[14]));
      if (!pred) throw fail("unknown predicate label '" + std::string(f[14]) + "'");
      ScoreComponents c{io::parse_double(f[17], "attention"),
                        io::parse_double(f[18], "subject confidence"),
                        io::parse_double(f[19], "object confidence"),
                        io::parse_double(f[20], "predicate"), io::parse_double(f[21], "prior")};
      set.relationships.push_back(ScoredRelationship{
          io::parse_u64(f[0], "subject index"), io::parse_u64(f[7], "object index"),
          object(f, 1), object(f, 8), *pred, c, io::parse_double(f[16], "log score")});
    }
    file.images.push_back(std::move(set));
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (!io::split_ws(line).empty()) throw fail("unexpected content after last image");
  }
  return file;
}

}  // namespace avr

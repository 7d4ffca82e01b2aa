#include "avr/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "avr/error.hpp"
#include "avr/io_util.hpp"

namespace avr {

std::vector<ImageSamples> prepare_samples(const Dataset& dataset, const FeatureBundle& features,
                                          const EmbeddingTable& embeddings,
                                          std::size_t max_attention_pairs,
                                          double negatives_per_positive, std::uint64_t seed) {
  const auto& labels = dataset.vocab.objects();
  std::vector<ImageSamples> out;
  out.reserve(dataset.images.size());
  for (const auto& img : dataset.images) {
    ImageSamples samples;
    samples.image_id = img.image_id;
    const auto& img_features = features.image(img.image_id);
    samples.global.assign(img_features.global.begin(), img_features.global.end());

    auto visual = [&](std::size_t s, std::size_t o) {
      const auto& v = features.pair(img.image_id, PairKey{PairSource::kGroundTruth,
                                                          static_cast<std::uint32_t>(s),
                                                          static_cast<std::uint32_t>(o)});
      return Vector(v.begin(), v.end());
    };
    auto embedding = [&](std::size_t obj) {
      return embeddings.at(labels.at(img.objects[obj].class_index));
    };

    std::set<std::pair<std::size_t, std::size_t>> annotated;
    for (const auto& rel : img.relationships) {
      annotated.emplace(rel.subject, rel.object);
      samples.predicate.push_back(PredicateExample{
          visual(rel.subject, rel.object),
          spatial_feature(img.objects[rel.subject].box, img.objects[rel.object].box, img.dims),
          embedding(rel.subject), embedding(rel.object), rel.predicate});
    }

    std::vector<std::pair<std::size_t, std::size_t>> negatives;
    for (std::size_t s = 0; s < img.objects.size(); ++s) {
      for (std::size_t o = 0; o < img.objects.size(); ++o) {
        if (s != o && !annotated.count({s, o})) negatives.emplace_back(s, o);
      }
    }
    std::size_t room = negatives.size();
    if (max_attention_pairs > 0) {
      room = std::min(room, max_attention_pairs > annotated.size()
                                ? max_attention_pairs - annotated.size()
                                : std::size_t{0});
    }
    if (negatives_per_positive > 0.0) {
      const auto per = std::max<std::size_t>(annotated.size(), 1);
      room = std::min(room, static_cast<std::size_t>(
                                std::ceil(negatives_per_positive * static_cast<double>(per))));
    }
    if (room < negatives.size()) {
      Rng rng(io::fnv1a64(img.image_id, seed ^ 0x9e3779b97f4a7c15ULL));
      rng.shuffle(negatives);
      negatives.resize(room);
      std::sort(negatives.begin(), negatives.end());
    }
    auto add_pair = [&](std::size_t s, std::size_t o, int label) {
      samples.attention.push_back(AttentionPair{
          visual(s, o), spatial_feature(img.objects[s].box, img.objects[o].box, img.dims),
          embedding(s), embedding(o), label});
    };
    for (const auto& [s, o] : annotated) add_pair(s, o, 1);
    for (const auto& [s, o] : negatives) add_pair(s, o, 0);
    out.push_back(std::move(samples));
  }
  return out;
}

JointLoss joint_loss(const RelationshipModel& model, const ParamStore& params,
                     std::span<const ImageSamples> images) {
  JointLoss out;
  out.grads = params.zero_gradients();
  for (const auto& img : images) {
    auto pred = model.predicate.loss(img.predicate, params);
    out.predicate += pred.loss;
    accumulate(out.grads, pred.grads);

    std::vector<AttentionExample> examples;
    examples.reserve(img.attention.size());
    for (const auto& pair : img.attention) {
      examples.push_back(AttentionExample{
          pair.visual, img.global, pair.spatial,
          model.predicate.semantic_feature(pair.subject_embedding, pair.object_embedding, params),
          pair.label});
    }
    auto att = model.attention.loss(examples, params);
    out.attention += att.loss;
    accumulate(out.grads, att.grads);
    for (std::size_t i = 0; i < img.attention.size(); ++i) {
      model.predicate.semantic_backward(img.attention[i].subject_embedding,
                                        img.attention[i].object_embedding, att.d_semantic[i],
                                        params, out.grads);
    }
  }
  return out;
}

double joint_loss_value(const RelationshipModel& model, const ParamStore& params,
                        std::span<const ImageSamples> images) {
  double total = 0.0;
  for (const auto& img : images) {
    total += model.predicate.loss_value(img.predicate, params);
    for (const auto& pair : img.attention) {
      const AttentionExample ex{
          pair.visual, img.global, pair.spatial,
          model.predicate.semantic_feature(pair.subject_embedding, pair.object_embedding, params),
          pair.label};
      total += model.attention.loss_value(std::span(&ex, 1), params);
    }
  }
  return total;
}

std::vector<EpochStats> train(RelationshipModel& model, std::span<const ImageSamples> samples,
                              const TrainOptions& options,
                              const std::function<void(const EpochStats&)>& on_epoch) {
  if (options.batch_size == 0) throw std::invalid_argument("batch size must be at least 1");
  if (!(options.learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (options.momentum < 0.0 || options.momentum >= 1.0) {
    throw std::invalid_argument("momentum must lie in [0, 1)");
  }
  Rng rng(options.seed ^ 0x5851f42d4c957f2dULL);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<EpochStats> history;
  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    rng.shuffle(order);
    EpochStats stats{epoch, 0.0, 0.0};
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const auto end = std::min(order.size(), start + options.batch_size);
      Gradients grads = model.params.zero_gradients();
      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        auto loss = joint_loss(model, model.params, samples.subspan(order[i], 1));
        stats.predicate_loss += loss.predicate;
        stats.attention_loss += loss.attention;
        batch_loss += loss.total();
        accumulate(grads, loss.grads, 1.0 / static_cast<double>(end - start));
      }
      if (!std::isfinite(batch_loss)) {
        throw NumericError("training loss became non-finite in epoch " + std::to_string(epoch));
      }
      if (options.clip_norm > 0.0) {
        double sq = 0.0;
        for (const auto& [_, g] : grads) {
          for (double v : g.values()) sq += v * v;
        }
        const double norm = std::sqrt(sq);
        if (norm > options.clip_norm) {
          for (auto& [_, g] : grads) {
            for (double& v : g.values()) v *= options.clip_norm / norm;
          }
        }
      }
      sgd_step(model.params, grads, options.learning_rate, options.momentum);
    }
    history.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  return history;
}

double predicate_accuracy(const RelationshipModel& model, std::span<const ImageSamples> samples) {
  std::size_t correct = 0;
  std::size_t total = 0;
  for (const auto& img : samples) {
    for (const auto& ex : img.predicate) {
      const auto fc =
          model.predicate.semantic_feature(ex.subject_embedding, ex.object_embedding, model.params);
      const auto probs = model.predicate.predict(ex.visual, ex.spatial, fc, model.params);
      const auto best = static_cast<std::size_t>(
          std::max_element(probs.begin(), probs.end()) - probs.begin());
      correct += best == ex.target;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace avr

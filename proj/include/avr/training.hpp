#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "avr/dataset.hpp"
#include "avr/model.hpp"

namespace avr {

struct TrainOptions {
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t epochs = 50;
  /// Images per minibatch; the summed loss gradient is divided by this count.
  std::size_t batch_size = 32;
  /// Cap on attention pairs per image. Positives are always kept; negatives
  /// are subsampled deterministically.
  std::size_t max_attention_pairs = 64;
  /// Cap on sampled negatives per annotated pair in an image (0 = no cap).
  /// The score ReLU clamps pairs with no gradient, so a heavy negative
  /// majority can drive every pair to 0 before positives separate.
  double negatives_per_positive = 1.0;
  /// Rescale the batch gradient to this global L2 norm when larger (0 = off).
  double clip_norm = 5.0;
  std::uint64_t seed = 0;
};

struct AttentionPair {
  Vector visual;
  SpatialFeature spatial;
  Vector subject_embedding;
  Vector object_embedding;
  int label = 0;
};

/// Training inputs of one image: annotated pairs for the predicate loss and
/// all (capped) ordered ground-truth pairs for the attention loss.
struct ImageSamples {
  std::string image_id;
  Vector global;
  std::vector<PredicateExample> predicate;
  std::vector<AttentionPair> attention;
};

std::vector<ImageSamples> prepare_samples(const Dataset& dataset, const FeatureBundle& features,
                                          const EmbeddingTable& embeddings,
                                          std::size_t max_attention_pairs,
                                          double negatives_per_positive, std::uint64_t seed);

struct JointLoss {
  double predicate = 0.0;
  double attention = 0.0;
  Gradients grads;

  double total() const { return combined_loss(predicate, attention); }
};

/// Loss_A + Loss_P over the images with gradients for every parameter. F_c
/// feeds both heads, so the attention loss also reaches the semantic MLP.
JointLoss joint_loss(const RelationshipModel& model, const ParamStore& params,
                     std::span<const ImageSamples> images);
double joint_loss_value(const RelationshipModel& model, const ParamStore& params,
                        std::span<const ImageSamples> images);

struct EpochStats {
  std::size_t epoch;
  double predicate_loss;
  double attention_loss;

  double total() const { return combined_loss(predicate_loss, attention_loss); }
};

/// Minibatch SGD with momentum on the joint loss. Epoch losses are summed
/// over batches as seen before each update.
std::vector<EpochStats> train(RelationshipModel& model, std::span<const ImageSamples> samples,
                              const TrainOptions& options,
                              const std::function<void(const EpochStats&)>& on_epoch = {});

/// Fraction of predicate examples whose argmax equals the target.
double predicate_accuracy(const RelationshipModel& model, std::span<const ImageSamples> samples);

}  // namespace avr

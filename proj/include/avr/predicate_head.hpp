#pragma once

#include <span>
#include <string>
#include <vector>

#include "avr/geometry.hpp"
#include "avr/numerics.hpp"

namespace avr {

struct PredicateHeadDims {
  std::size_t visual_dim = 32;
  std::size_t embedding_dim = 50;
  std::size_t semantic_hidden = 64;
  std::size_t semantic_dim = 64;
  std::size_t num_predicates = 4;
};

/// One annotated (subject, object, predicate) training example.
struct PredicateExample {
  Vector visual;
  SpatialFeature spatial;
  Vector subject_embedding;
  Vector object_embedding;
  std::size_t target;
};

struct LossAndGrads {
  double loss = 0.0;
  Gradients grads;
};

/// Multi-modal predicate classifier. Parameters live in a ParamStore under the
/// "predicate_head/" prefix; the semantic MLP (two FC layers, ReLU between)
/// maps concatenated label embeddings to F_c, and a single softmax layer fuses
/// the visual, semantic and spatial inputs.
class PredicateHead {
 public:
  static constexpr const char* kPrefix = "predicate_head/";

  explicit PredicateHead(PredicateHeadDims dims);

  const PredicateHeadDims& dims() const { return dims_; }

  /// Xavier-uniform weights, zero biases.
  void init_params(ParamStore& store, Rng& rng) const;
  /// Throws std::invalid_argument if any parameter is missing or misshapen.
  void check_params(const ParamStore& store) const;

  Vector semantic_feature(std::span<const double> subject_embedding,
                          std::span<const double> object_embedding,
                          const ParamStore& store) const;

  /// Backpropagates `d_semantic` (dLoss/dF_c) through the semantic MLP.
  void semantic_backward(std::span<const double> subject_embedding,
                         std::span<const double> object_embedding,
                         std::span<const double> d_semantic, const ParamStore& store,
                         Gradients& grads) const;

  /// softmax(W_v F_v + W_c F_c + W_b F_b + b).
  Vector predict(std::span<const double> visual, const SpatialFeature& spatial,
                 std::span<const double> semantic, const ParamStore& store) const;

  /// Summed cross-entropy over the batch with gradients for every head
  /// parameter.
  LossAndGrads loss(std::span<const PredicateExample> batch, const ParamStore& store) const;
  double loss_value(std::span<const PredicateExample> batch, const ParamStore& store) const;

  static std::string param(const char* name) { return std::string(kPrefix) + name; }

 private:
  Vector logits(std::span<const double> visual, const SpatialFeature& spatial,
                std::span<const double> semantic, const ParamStore& store) const;

  PredicateHeadDims dims_;
};

}  // namespace avr

#pragma once

#include <span>
#include <string>
#include <vector>

#include "avr/geometry.hpp"
#include "avr/numerics.hpp"
#include "avr/predicate_head.hpp"

namespace avr {

struct AttentionHeadDims {
  std::size_t visual_dim = 32;
  std::size_t global_dim = 16;
  std::size_t semantic_dim = 64;
  /// Width of the visual-global fusion layers and the semantic transform.
  std::size_t hidden = 64;
};

/// One candidate pair of an image with its saliency label.
struct AttentionExample {
  Vector visual;
  Vector global;
  SpatialFeature spatial;
  Vector semantic;
  /// 1 iff the pair is the (subject, object) of an annotated relationship.
  int label = 0;
};

struct AttentionLoss {
  double loss = 0.0;
  Gradients grads;
  /// dLoss/dF_c per example, for chaining into the semantic MLP.
  std::vector<Vector> d_semantic;
};

/// Saliency scorer under the "attention_head/" prefix:
///   F_v' = R(W3 R(W1 F_v + W2 F_a + b1) + b2)
///   F_c' = R(W7 F_c + b4)
///   e    = R(W4 F_v' + W5 F_b + W6 F_c' + b3)      (scalar)
class AttentionHead {
 public:
  static constexpr const char* kPrefix = "attention_head/";

  explicit AttentionHead(AttentionHeadDims dims);

  const AttentionHeadDims& dims() const { return dims_; }

  void init_params(ParamStore& store, Rng& rng) const;
  void check_params(const ParamStore& store) const;

  Vector fuse_visual_global(std::span<const double> visual, std::span<const double> global,
                            const ParamStore& store) const;
  /// Raw score e >= 0 from the fused visual feature.
  double attention_score(std::span<const double> fused_visual, const SpatialFeature& spatial,
                         std::span<const double> semantic, const ParamStore& store) const;
  double score(const AttentionExample& ex, const ParamStore& store) const;

  /// Summed binary cross-entropy of sigmoid(e) against the labels.
  AttentionLoss loss(std::span<const AttentionExample> batch, const ParamStore& store) const;
  double loss_value(std::span<const AttentionExample> batch, const ParamStore& store) const;

  static std::string param(const char* name) { return std::string(kPrefix) + name; }

 private:
  AttentionHeadDims dims_;
};

/// Softmax over one image's raw pair scores.
Vector normalize_attention(std::span<const double> raw_scores);

/// Loss = Loss_A + Loss_P.
inline double combined_loss(double predicate_part, double attention_part) {
  return attention_part + predicate_part;
}

}  // namespace avr

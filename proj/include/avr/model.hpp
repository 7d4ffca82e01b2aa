#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "avr/attention_head.hpp"
#include "avr/dataset.hpp"
#include "avr/numerics.hpp"
#include "avr/predicate_head.hpp"

namespace avr {

/// Layer widths not implied by the data.
struct HeadSizes {
  std::size_t semantic_hidden = 64;
  std::size_t semantic_dim = 64;
  std::size_t attention_hidden = 64;
};

/// Both heads plus their shared parameter store.
struct RelationshipModel {
  PredicateHead predicate;
  AttentionHead attention;
  ParamStore params;

  RelationshipModel(PredicateHeadDims predicate_dims, AttentionHeadDims attention_dims);

  /// Dimensions derived from the feature bundle, embeddings and vocabulary.
  static RelationshipModel for_data(const FeatureBundle& features,
                                    const EmbeddingTable& embeddings, const Vocabulary& vocab,
                                    const HeadSizes& sizes);

  void init_params(Rng& rng);

  /// Throws DataError if the bundle or embeddings disagree with the heads.
  void check_inputs(const FeatureBundle& features, const EmbeddingTable& embeddings,
                    const Vocabulary& vocab) const;

  /// Records dimensions in the metadata so from_checkpoint can rebuild.
  Checkpoint to_checkpoint(std::uint64_t seed, std::map<std::string, std::string> metadata) const;
  static RelationshipModel from_checkpoint(const Checkpoint& ckpt);
};

}  // namespace avr

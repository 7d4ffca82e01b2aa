#include "avr/model.hpp"

#include "avr/error.hpp"
#include "avr/io_util.hpp"

namespace avr {

RelationshipModel::RelationshipModel(PredicateHeadDims predicate_dims,
                                     AttentionHeadDims attention_dims)
    : predicate(predicate_dims), attention(attention_dims) {
  if (predicate_dims.semantic_dim != attention_dims.semantic_dim ||
      predicate_dims.visual_dim != attention_dims.visual_dim) {
    throw std::invalid_argument("heads disagree on shared feature dimensions");
  }
}

RelationshipModel RelationshipModel::for_data(const FeatureBundle& features,
                                              const EmbeddingTable& embeddings,
                                              const Vocabulary& vocab, const HeadSizes& sizes) {
  PredicateHeadDims pd{features.visual_dim, embeddings.dimension, sizes.semantic_hidden,
                       sizes.semantic_dim, vocab.num_predicates()};
  AttentionHeadDims ad{features.visual_dim, features.global_dim, sizes.semantic_dim,
                       sizes.attention_hidden};
  return RelationshipModel(pd, ad);
}

void RelationshipModel::init_params(Rng& rng) {
  predicate.init_params(params, rng);
  attention.init_params(params, rng);
}

void RelationshipModel::check_inputs(const FeatureBundle& features,
                                     const EmbeddingTable& embeddings,
                                     const Vocabulary& vocab) const {
  const auto& pd = predicate.dims();
  const auto& ad = attention.dims();
  if (features.visual_dim != pd.visual_dim || features.global_dim != ad.global_dim) {
    throw DataError("feature bundle dimensions (" + std::to_string(features.visual_dim) + ", " +
                    std::to_string(features.global_dim) + ") do not match the model (" +
                    std::to_string(pd.visual_dim) + ", " + std::to_string(ad.global_dim) + ")");
  }
  if (embeddings.dimension != pd.embedding_dim) {
    throw DataError("embedding dimension " + std::to_string(embeddings.dimension) +
                    " does not match the model's " + std::to_string(pd.embedding_dim));
  }
  if (vocab.num_predicates() != pd.num_predicates) {
    throw DataError("vocabulary has " + std::to_string(vocab.num_predicates()) +
                    " predicates but the model predicts " + std::to_string(pd.num_predicates));
  }
}

Checkpoint RelationshipModel::to_checkpoint(std::uint64_t seed,
                                            std::map<std::string, std::string> metadata) const {
  const auto& pd = predicate.dims();
  const auto& ad = attention.dims();
  metadata["dims.visual"] = std::to_string(pd.visual_dim);
  metadata["dims.global"] = std::to_string(ad.global_dim);
  metadata["dims.embedding"] = std::to_string(pd.embedding_dim);
  metadata["dims.semantic_hidden"] = std::to_string(pd.semantic_hidden);
  metadata["dims.semantic"] = std::to_string(pd.semantic_dim);
  metadata["dims.attention_hidden"] = std::to_string(ad.hidden);
  metadata["dims.predicates"] = std::to_string(pd.num_predicates);
  return Checkpoint{seed, std::move(metadata), params};
}

RelationshipModel RelationshipModel::from_checkpoint(const Checkpoint& ckpt) {
  auto dim = [&](const char* key) -> std::size_t {
    auto it = ckpt.metadata.find(key);
    if (it == ckpt.metadata.end()) {
      throw DataError(std::string("checkpoint metadata lacks '") + key + "'");
    }
    return static_cast<std::size_t>(io::parse_u64(it->second, key));
  };
  PredicateHeadDims pd{dim("dims.visual"), dim("dims.embedding"), dim("dims.semantic_hidden"),
                       dim("dims.semantic"), dim("dims.predicates")};
  AttentionHeadDims ad{pd.visual_dim, dim("dims.global"), pd.semantic_dim,
                       dim("dims.attention_hidden")};
  RelationshipModel model(pd, ad);
  model.params = ckpt.params;
  try {
    model.predicate.check_params(model.params);
    model.attention.check_params(model.params);
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("checkpoint does not match its recorded dimensions: ") + e.what());
  }
  return model;
}

}  // namespace avr

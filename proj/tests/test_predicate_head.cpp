#include <gtest/gtest.h>

#include <cmath>

#include "avr/predicate_head.hpp"

namespace {

avr::PredicateHeadDims small_dims() {
  avr::PredicateHeadDims d;
  d.visual_dim = 5;
  d.embedding_dim = 4;
  d.semantic_hidden = 6;
  d.semantic_dim = 3;
  d.num_predicates = 3;
  return d;
}

avr::Vector random_vec(avr::Rng& rng, std::size_t n) {
  avr::Vector v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

avr::PredicateExample random_example(avr::Rng& rng, const avr::PredicateHeadDims& d) {
  avr::PredicateExample ex;
  ex.visual = random_vec(rng, d.visual_dim);
  for (double& x : ex.spatial) x = rng.uniform(-1, 1);
  ex.subject_embedding = random_vec(rng, d.embedding_dim);
  ex.object_embedding = random_vec(rng, d.embedding_dim);
  ex.target = rng.below(d.num_predicates);
  return ex;
}

void zero_params(avr::ParamStore& store) {
  for (const auto& name : store.names()) {
    for (double& v : store.get_mut(name).values()) v = 0.0;
  }
}

}  // namespace

TEST(PredicateHead, ZeroWeightsGiveUniform) {
  const auto d = small_dims();
  avr::PredicateHead head(d);
  avr::ParamStore store;
  avr::Rng rng(1);
  head.init_params(store, rng);
  zero_params(store);
  const auto ex = random_example(rng, d);
  const auto fc = head.semantic_feature(ex.subject_embedding, ex.object_embedding, store);
  for (double v : fc) EXPECT_EQ(v, 0.0);
  const auto p = head.predict(ex.visual, ex.spatial, fc, store);
  for (double v : p) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(PredicateHead, BiasOnlyClosedForm) {
  auto d = small_dims();
  d.num_predicates = 2;
  avr::PredicateHead head(d);
  avr::ParamStore store;
  avr::Rng rng(2);
  head.init_params(store, rng);
  zero_params(store);
  store.get_mut(avr::PredicateHead::param("b"))(0, 0) = std::log(3.0);
  const auto ex = random_example(rng, d);
  const auto fc = head.semantic_feature(ex.subject_embedding, ex.object_embedding, store);
  const auto p = head.predict(ex.visual, ex.spatial, fc, store);
  EXPECT_NEAR(p[0], 0.75, 1e-15);
  EXPECT_NEAR(p[1], 0.25, 1e-15);
}

TEST(PredicateHead, UniformModelLossIsMLnK) {
  const auto d = small_dims();
  avr::PredicateHead head(d);
  avr::ParamStore store;
  avr::Rng rng(3);
  head.init_params(store, rng);
  zero_params(store);
  std::vector<avr::PredicateExample> batch;
  for (int i = 0; i < 7; ++i) batch.push_back(random_example(rng, d));
  EXPECT_NEAR(head.loss(batch, store).loss, 7.0 * std::log(3.0), 1e-12);
}

TEST(PredicateHead, ConfidentModelLossNearZero) {
  auto d = small_dims();
  avr::PredicateHead head(d);
  avr::ParamStore store;
  avr::Rng rng(4);
  head.init_params(store, rng);
  zero_params(store);
  store.get_mut(avr::PredicateHead::param("b"))(1, 0) = 60.0;
  auto ex = random_example(rng, d);
  ex.target = 1;
  EXPECT_LT(head.loss(std::span(&ex, 1), store).loss, 1e-20);
}

TEST(PredicateHead, MatchesDirectFormula) {
  const auto d = small_dims();
  avr::PredicateHead head(d);
  avr::ParamStore store;
  avr::Rng rng(5);
  head.init_params(store, rng);
  for (const auto& name : store.names()) {
    for (double& v : store.get_mut(name).values()) v = rng.normal();
  }
  const auto ex = random_example(rng, d);
  auto P = [&](const char* n) -> const avr::Matrix& { return store.get(avr::PredicateHead::param(n)); };

  // semantic MLP written out by hand
  std::vector<double> in(ex.subject_embedding);
  in.insert(in.end(), ex.object_embedding.begin(), ex.object_embedding.end());
  std::vector<double> h(d.semantic_hidden);
  for (std::size_t i = 0; i < h.size(); ++i) {
    double z = P("sem_b1")(i, 0);
    for (std::size_t j = 0; j < in.size(); ++j) z += P("sem_w1")(i, j) * in[j];
    h[i] = std::max(0.0, z);
  }
  std::vector<double> fc(d.semantic_dim);
  for (std::size_t i = 0; i < fc.size(); ++i) {
    double z = P("sem_b2")(i, 0);
    for (std::size_t j = 0; j < h.size(); ++j) z += P("sem_w2")(i, j) * h[j];
    fc[i] = z;
  }
  const auto got_fc = head.semantic_feature(ex.subject_embedding, ex.object_embedding, store);
  for (std::size_t i = 0; i < fc.size(); ++i) EXPECT_NEAR(got_fc[i], fc[i], 1e-12);

  std::vector<double> logits(d.num_predicates);
  double mx = -1e300;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    double z = P("b")(k, 0);
    for (std::size_t j = 0; j < d.visual_dim; ++j) z += P("w_v")(k, j) * ex.visual[j];
    for (std::size_t j = 0; j < d.semantic_dim; ++j) z += P("w_c")(k, j) * fc[j];
    for (std::size_t j = 0; j < 14; ++j) z += P("w_b")(k, j) * ex.spatial[j];
    logits[k] = z;
    mx = std::max(mx, z);
  }
  double denom = 0.0;
  for (double z : logits) denom += std::exp(z - mx);
  const auto p = head.predict(ex.visual, ex.spatial, got_fc, store);
  for (std::size_t k = 0; k < logits.size(); ++k) {
    EXPECT_NEAR(p[k], std::exp(logits[k] - mx) / denom, 1e-12);
  }
}

TEST(PredicateHead, OrderOfEmbeddingsMatters) {
  const auto d = small_dims();
  avr::PredicateHead head(d);
  avr::ParamStore store;
  avr::Rng rng(6);
  head.init_params(store, rng);
  const auto a = random_vec(rng, d.embedding_dim);
  const auto b = random_vec(rng, d.embedding_dim);
  EXPECT_EQ(head.semantic_feature(a, b, store), head.semantic_feature(a, b, store));
  EXPECT_NE(head.semantic_feature(a, b, store), head.semantic_feature(b, a, store));
}

TEST(PredicateHead, GradientsMatchFiniteDifferences) {
  const auto d = small_dims();
  avr::PredicateHead head(d);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    avr::ParamStore store;
    avr::Rng rng(100 + seed);
    head.init_params(store, rng);
    for (const auto& name : store.names()) {
      for (double& v : store.get_mut(name).values()) v += 0.1 * rng.normal();
    }
    std::vector<avr::PredicateExample> batch;
    for (int i = 0; i < 6; ++i) batch.push_back(random_example(rng, d));
    const auto analytic = head.loss(batch, store);
    EXPECT_EQ(analytic.grads.size(), store.names().size());
    const double err = avr::grad_check(
        [&](const avr::ParamStore& s) { return head.loss_value(batch, s); }, store, analytic.grads);
    EXPECT_LT(err, 1e-4) << "seed " << seed;
  }
}

TEST(PredicateHead, RejectsDimensionMismatch) {
  const auto d = small_dims();
  avr::PredicateHead head(d);
  avr::ParamStore store;
  avr::Rng rng(7);
  head.init_params(store, rng);
  const auto ex = random_example(rng, d);
  const auto fc = head.semantic_feature(ex.subject_embedding, ex.object_embedding, store);
  EXPECT_THROW(head.predict(avr::Vector(d.visual_dim + 1), ex.spatial, fc, store),
               std::invalid_argument);
  EXPECT_THROW(head.semantic_feature(avr::Vector(3), ex.object_embedding, store),
               std::invalid_argument);
}

TEST(PredicateHeadProperty, DistributionSumsToOne) {
  const auto d = small_dims();
  avr::PredicateHead head(d);
  avr::ParamStore store;
  avr::Rng rng(8);
  head.init_params(store, rng);
  for (int i = 0; i < 200; ++i) {
    const auto ex = random_example(rng, d);
    const auto fc = head.semantic_feature(ex.subject_embedding, ex.object_embedding, store);
    const auto p = head.predict(ex.visual, ex.spatial, fc, store);
    double sum = 0.0;
    for (double v : p) {
      EXPECT_GT(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(PredicateHeadProperty, UniformBiasShiftInvariant) {
  const auto d = small_dims();
  avr::PredicateHead head(d);
  avr::ParamStore store;
  avr::Rng rng(9);
  head.init_params(store, rng);
  const auto ex = random_example(rng, d);
  const auto fc = head.semantic_feature(ex.subject_embedding, ex.object_embedding, store);
  const auto before = head.predict(ex.visual, ex.spatial, fc, store);
  for (double& v : store.get_mut(avr::PredicateHead::param("b")).values()) v += 4.5;
  const auto after = head.predict(ex.visual, ex.spatial, fc, store);
  for (std::size_t k = 0; k < before.size(); ++k) EXPECT_NEAR(before[k], after[k], 1e-12);
}

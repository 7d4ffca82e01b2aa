#include "avr/predicate_head.hpp"

#include <stdexcept>

namespace avr {

namespace {

Vector concat(std::span<const double> a, std::span<const double> b) {
  Vector out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

}  // namespace

PredicateHead::PredicateHead(PredicateHeadDims dims) : dims_(dims) {
  if (dims_.num_predicates == 0 || dims_.embedding_dim == 0 || dims_.semantic_dim == 0 ||
      dims_.semantic_hidden == 0) {
    throw std::invalid_argument("predicate head dimensions must be positive");
  }
}

void PredicateHead::init_params(ParamStore& store, Rng& rng) const {
  const auto k = dims_.num_predicates;
  auto weight = [&](const char* name, std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    xavier_uniform(m, rng);
    store.add(param(name), std::move(m));
  };
  weight("sem_w1", dims_.semantic_hidden, 2 * dims_.embedding_dim);
  store.add(param("sem_b1"), Matrix(dims_.semantic_hidden, 1));
  weight("sem_w2", dims_.semantic_dim, dims_.semantic_hidden);
  store.add(param("sem_b2"), Matrix(dims_.semantic_dim, 1));
  weight("w_v", k, dims_.visual_dim);
  weight("w_c", k, dims_.semantic_dim);
  weight("w_b", k, kSpatialFeatureDim);
  store.add(param("b"), Matrix(k, 1));
}

void PredicateHead::check_params(const ParamStore& store) const {
  const auto k = dims_.num_predicates;
  auto expect = [&](const char* name, std::size_t rows, std::size_t cols) {
    const auto full = param(name);
    if (!store.contains(full)) {
      throw std::invalid_argument("missing parameter '" + full + "'");
    }
    const auto& m = store.get(full);
    if (m.rows() != rows || m.cols() != cols) {
      throw std::invalid_argument("parameter '" + full + "' has shape " +
                                  std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                                  ", expected " + std::to_string(rows) + "x" +
                                  std::to_string(cols));
    }
  };
  expect("sem_w1", dims_.semantic_hidden, 2 * dims_.embedding_dim);
  expect("sem_b1", dims_.semantic_hidden, 1);
  expect("sem_w2", dims_.semantic_dim, dims_.semantic_hidden);
  expect("sem_b2", dims_.semantic_dim, 1);
  expect("w_v", k, dims_.visual_dim);
  expect("w_c", k, dims_.semantic_dim);
  expect("w_b", k, kSpatialFeatureDim);
  expect("b", k, 1);
}

Vector PredicateHead::semantic_feature(std::span<const double> es, std::span<const double> eo,
                                       const ParamStore& store) const {
  const auto input = concat(es, eo);
  Vector hidden(store.get(param("sem_b1")).values());
  add_matvec(hidden, store.get(param("sem_w1")), input);
  hidden = relu(hidden);
  Vector out(store.get(param("sem_b2")).values());
  add_matvec(out, store.get(param("sem_w2")), hidden);
  return out;
}

void PredicateHead::semantic_backward(std::span<const double> es, std::span<const double> eo,
                                      std::span<const double> d_semantic,
                                      const ParamStore& store, Gradients& grads) const {
  const auto input = concat(es, eo);
  Vector pre(store.get(param("sem_b1")).values());
  add_matvec(pre, store.get(param("sem_w1")), input);
  const Vector hidden = relu(pre);

  add_outer(grads.at(param("sem_w2")), d_semantic, hidden);
  add_to(grads.at(param("sem_b2")).values(), d_semantic);
  Vector d_hidden(hidden.size(), 0.0);
  add_matvec_transposed(d_hidden, store.get(param("sem_w2")), d_semantic);
  for (std::size_t i = 0; i < d_hidden.size(); ++i) {
    if (pre[i] <= 0.0) d_hidden[i] = 0.0;
  }
  add_outer(grads.at(param("sem_w1")), d_hidden, input);
  add_to(grads.at(param("sem_b1")).values(), d_hidden);
}

Vector PredicateHead::logits(std::span<const double> visual, const SpatialFeature& spatial,
                             std::span<const double> semantic, const ParamStore& store) const {
  Vector z(store.get(param("b")).values());
  add_matvec(z, store.get(param("w_v")), visual);
  add_matvec(z, store.get(param("w_c")), semantic);
  add_matvec(z, store.get(param("w_b")), spatial);
  return z;
}

Vector PredicateHead::predict(std::span<const double> visual, const SpatialFeature& spatial,
                              std::span<const double> semantic, const ParamStore& store) const {
  return softmax(logits(visual, spatial, semantic, store));
}

LossAndGrads PredicateHead::loss(std::span<const PredicateExample> batch,
                                 const ParamStore& store) const {
  LossAndGrads out;
  for (const char* name : {"sem_w1", "sem_b1", "sem_w2", "sem_b2", "w_v", "w_c", "w_b", "b"}) {
    const auto& m = store.get(param(name));
    out.grads.emplace(param(name), Matrix(m.rows(), m.cols()));
  }
  for (const auto& ex : batch) {
    const Vector fc = semantic_feature(ex.subject_embedding, ex.object_embedding, store);
    const Vector probs = predict(ex.visual, ex.spatial, fc, store);
    out.loss += cross_entropy(probs, ex.target);

    Vector d_logits = probs;
    d_logits[ex.target] -= 1.0;
    add_outer(out.grads.at(param("w_v")), d_logits, ex.visual);
    add_outer(out.grads.at(param("w_c")), d_logits, fc);
    add_outer(out.grads.at(param("w_b")), d_logits, ex.spatial);
    add_to(out.grads.at(param("b")).values(), d_logits);

    Vector d_fc(fc.size(), 0.0);
    add_matvec_transposed(d_fc, store.get(param("w_c")), d_logits);
    semantic_backward(ex.subject_embedding, ex.object_embedding, d_fc, store, out.grads);
  }
  return out;
}

double PredicateHead::loss_value(std::span<const PredicateExample> batch,
                                 const ParamStore& store) const {
  double total = 0.0;
  for (const auto& ex : batch) {
    const Vector fc = semantic_feature(ex.subject_embedding, ex.object_embedding, store);
    total += cross_entropy(predict(ex.visual, ex.spatial, fc, store), ex.target);
  }
  return total;
}

}  // namespace avr

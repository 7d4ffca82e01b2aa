#include "avr/attention_head.hpp"

#include <stdexcept>

namespace avr {

namespace {

/// Forward activations kept for backprop.
struct Trace {
  Vector pre1, h1, pre2, fused, pre7, sem;
  double pre_score = 0.0;
  double score = 0.0;
};

}  // namespace

AttentionHead::AttentionHead(AttentionHeadDims dims) : dims_(dims) {
  if (dims_.hidden == 0 || dims_.semantic_dim == 0) {
    throw std::invalid_argument("attention head dimensions must be positive");
  }
}

void AttentionHead::init_params(ParamStore& store, Rng& rng) const {
  const auto h = dims_.hidden;
  auto weight = [&](const char* name, std::size_t rows, std::size_t cols, double scale = 1.0) {
    Matrix m(rows, cols);
    xavier_uniform(m, rng);
    for (double& v : m.values()) v *= scale;
    store.add(param(name), std::move(m));
  };
  weight("w1", h, dims_.visual_dim);
  weight("w2", h, dims_.global_dim);
  store.add(param("b1"), Matrix(h, 1));
  weight("w3", h, h);
  store.add(param("b2"), Matrix(h, 1));
  weight("w7", h, dims_.semantic_dim);
  store.add(param("b4"), Matrix(h, 1));
  // Small output weights and a positive bias start every pair just inside the
  // score ReLU. From large initial scores the first updates mostly shift all
  // pairs down together and overshoot past 0, where no gradient is left.
  weight("w4", 1, h, 0.1);
  weight("w5", 1, kSpatialFeatureDim, 0.1);
  weight("w6", 1, h, 0.1);
  store.add(param("b3"), Matrix(1, 1, 0.5));
}

void AttentionHead::check_params(const ParamStore& store) const {
  const auto h = dims_.hidden;
  auto expect = [&](const char* name, std::size_t rows, std::size_t cols) {
    const auto full = param(name);
    if (!store.contains(full)) {
      throw std::invalid_argument("missing parameter '" + full + "'");
    }
    const auto& m = store.get(full);
    if (m.rows() != rows || m.cols() != cols) {
      throw std::invalid_argument("parameter '" + full + "' has an unexpected shape");
    }
  };
  expect("w1", h, dims_.visual_dim);
  expect("w2", h, dims_.global_dim);
  expect("b1", h, 1);
  expect("w3", h, h);
  expect("b2", h, 1);
  expect("w7", h, dims_.semantic_dim);
  expect("b4", h, 1);
  expect("w4", 1, h);
  expect("w5", 1, kSpatialFeatureDim);
  expect("w6", 1, h);
  expect("b3", 1, 1);
}

namespace {

Trace forward(std::span<const double> visual, std::span<const double> global, const SpatialFeature& spatial,
              std::span<const double> semantic, const ParamStore& store) {
  auto p = [&](const char* n) -> const Matrix& { return store.get(AttentionHead::param(n)); };
  Trace t;
  t.pre1 = p("b1").values();
  add_matvec(t.pre1, p("w1"), visual);
  add_matvec(t.pre1, p("w2"), global);
  t.h1 = relu(t.pre1);
  t.pre2 = p("b2").values();
  add_matvec(t.pre2, p("w3"), t.h1);
  t.fused = relu(t.pre2);

  t.pre7 = p("b4").values();
  add_matvec(t.pre7, p("w7"), semantic);
  t.sem = relu(t.pre7);

  Vector z = p("b3").values();
  add_matvec(z, p("w4"), t.fused);
  add_matvec(z, p("w5"), spatial);
  add_matvec(z, p("w6"), t.sem);
  t.pre_score = z[0];
  t.score = z[0] > 0.0 ? z[0] : 0.0;
  return t;
}

void mask_relu(Vector& grad, const Vector& pre) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (pre[i] <= 0.0) grad[i] = 0.0;
  }
}

}  // namespace

Vector AttentionHead::fuse_visual_global(std::span<const double> visual,
                                         std::span<const double> global,
                                         const ParamStore& store) const {
  Vector a = store.get(param("b1")).values();
  add_matvec(a, store.get(param("w1")), visual);
  add_matvec(a, store.get(param("w2")), global);
  a = relu(a);
  Vector out = store.get(param("b2")).values();
  add_matvec(out, store.get(param("w3")), a);
  return relu(out);
}

double AttentionHead::attention_score(std::span<const double> fused_visual,
                                      const SpatialFeature& spatial,
                                      std::span<const double> semantic,
                                      const ParamStore& store) const {
  Vector sem = store.get(param("b4")).values();
  add_matvec(sem, store.get(param("w7")), semantic);
  sem = relu(sem);
  Vector z = store.get(param("b3")).values();
  add_matvec(z, store.get(param("w4")), fused_visual);
  add_matvec(z, store.get(param("w5")), spatial);
  add_matvec(z, store.get(param("w6")), sem);
  return z[0] > 0.0 ? z[0] : 0.0;
}

double AttentionHead::score(const AttentionExample& ex, const ParamStore& store) const {
  return forward(ex.visual, ex.global, ex.spatial, ex.semantic, store).score;
}

AttentionLoss AttentionHead::loss(std::span<const AttentionExample> batch,
                                  const ParamStore& store) const {
  AttentionLoss out;
  for (const char* name : {"w1", "w2", "b1", "w3", "b2", "w7", "b4", "w4", "w5", "w6", "b3"}) {
    const auto& m = store.get(param(name));
    out.grads.emplace(param(name), Matrix(m.rows(), m.cols()));
  }
  auto g = [&](const char* n) -> Matrix& { return out.grads.at(param(n)); };
  auto p = [&](const char* n) -> const Matrix& { return store.get(param(n)); };

  out.d_semantic.reserve(batch.size());
  for (const auto& ex : batch) {
    const Trace t = forward(ex.visual, ex.global, ex.spatial, ex.semantic, store);
    const double label = ex.label ? 1.0 : 0.0;
    out.loss += label * softplus(-t.score) + (1.0 - label) * softplus(t.score);

    const double d_score = sigmoid(t.score) - label;
    const double d_pre = t.pre_score > 0.0 ? d_score : 0.0;
    const Vector dz{d_pre};

    add_outer(g("w4"), dz, t.fused);
    add_outer(g("w5"), dz, ex.spatial);
    add_outer(g("w6"), dz, t.sem);
    g("b3").values()[0] += d_pre;

    Vector d_sem(t.sem.size(), 0.0);
    add_matvec_transposed(d_sem, p("w6"), dz);
    mask_relu(d_sem, t.pre7);
    add_outer(g("w7"), d_sem, ex.semantic);
    add_to(g("b4").values(), d_sem);
    Vector d_fc(ex.semantic.size(), 0.0);
    add_matvec_transposed(d_fc, p("w7"), d_sem);
    out.d_semantic.push_back(std::move(d_fc));

    Vector d_fused(t.fused.size(), 0.0);
    add_matvec_transposed(d_fused, p("w4"), dz);
    mask_relu(d_fused, t.pre2);
    add_outer(g("w3"), d_fused, t.h1);
    add_to(g("b2").values(), d_fused);
    Vector d_h1(t.h1.size(), 0.0);
    add_matvec_transposed(d_h1, p("w3"), d_fused);
    mask_relu(d_h1, t.pre1);
    add_outer(g("w1"), d_h1, ex.visual);
    add_outer(g("w2"), d_h1, ex.global);
    add_to(g("b1").values(), d_h1);
  }
  return out;
}

double AttentionHead::loss_value(std::span<const AttentionExample> batch,
                                 const ParamStore& store) const {
  double total = 0.0;
  for (const auto& ex : batch) {
    const double e = score(ex, store);
    total += ex.label ? softplus(-e) : softplus(e);
  }
  return total;
}

Vector normalize_attention(std::span<const double> raw_scores) {
  if (raw_scores.empty()) {
    throw std::invalid_argument("attention normalization needs at least one pair");
  }
  return softmax(raw_scores);
}

}  // namespace avr

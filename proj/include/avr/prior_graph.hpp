#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "avr/dataset.hpp"
#include "avr/numerics.hpp"

namespace avr {

/// Bijection between ordered label pairs (s, o) and columns s * N + o.
class PairIndex {
 public:
  explicit PairIndex(std::size_t num_objects) : n_(num_objects) {}

  std::size_t size() const { return n_ * n_; }
  std::size_t index(std::size_t subject, std::size_t object) const { return subject * n_ + object; }
  std::size_t subject(std::size_t column) const { return column / n_; }
  std::size_t object(std::size_t column) const { return column % n_; }

 private:
  std::size_t n_;
};

/// Compressed sparse row matrix, the storage for the pair-similarity graph.
class SparseMatrix {
 public:
  struct Entry {
    std::size_t col;
    double value;
  };

  SparseMatrix() = default;
  /// `rows[i]` holds row i's entries; they are sorted by column on insertion.
  SparseMatrix(std::size_t cols, std::vector<std::vector<Entry>> rows);
  static SparseMatrix identity(std::size_t n);
  static SparseMatrix from_dense(const Matrix& dense);

  std::size_t rows() const { return row_ptr_.empty() ? 0 : row_ptr_.size() - 1; }
  std::size_t cols() const { return cols_; }
  std::size_t nnz() const { return values_.size(); }

  template <typename F>
  void for_each_in_row(std::size_t r, F&& f) const {
    for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) f(col_idx_[k], values_[k]);
  }

  double row_sum(std::size_t r) const;
  Matrix to_dense() const;

 private:
  std::size_t cols_ = 0;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<std::size_t> col_idx_;
  std::vector<double> values_;
};

/// Row-normalized predicate-to-pair frequency table.
struct FrequencyTable {
  Matrix d0;  // K x N^2
  /// Predicates that never occur; their rows stay zero.
  std::vector<bool> zero_rows;
};

/// Counts annotated triplets per (predicate, label pair). `smoothing` is added
/// to every count before row normalization (0 disables it).
FrequencyTable build_d0(const Dataset& dataset, double smoothing = 0.0);

enum class PairSimilarity {
  /// cos(a, c) * cos(b, d), cosines clamped to [0, 1].
  kProduct,
  /// (cos(a, c) + cos(b, d)) / 2, cosines clamped to [0, 1].
  kMean,
};

struct SimilarityGraph {
  SparseMatrix m;  // N^2 x N^2, row-stochastic except flagged rows
  std::vector<bool> zero_rows;
};

/// Pair-to-pair similarity graph. Each row keeps its diagonal plus its `top_k`
/// largest positive off-diagonal entries (0 keeps every positive entry) and
/// is row-normalized after sparsification.
SimilarityGraph build_m(const EmbeddingTable& embeddings, const Vocabulary& vocab,
                        std::size_t top_k, PairSimilarity similarity = PairSimilarity::kProduct);

/// Applies D <- lambda D M + (1 - lambda) D0 `steps` times starting from D0.
/// `observer`, when set, sees every iterate including D0 (step 0).
Matrix walk_iterative(const Matrix& d0, const SparseMatrix& m, double lambda, std::size_t steps,
                      const std::function<void(std::size_t, const Matrix&)>& observer = {});

struct ClosedFormOptions {
  /// Largest N^2 solved with a dense LU factorization; beyond it the fixed
  /// point is found by iteration.
  std::size_t dense_limit = 2500;
  double tolerance = 1e-10;
  std::size_t max_iterations = 100000;
};

/// The fixed point D = (1 - lambda) D0 (I - lambda M)^{-1}, computed by solving
/// (I - lambda M)^T D^T = (1 - lambda) D0^T; the inverse is never formed.
Matrix walk_closed_form(const Matrix& d0, const SparseMatrix& m, double lambda,
                        const ClosedFormOptions& options = {});

struct PriorOptions {
  double lambda = 0.5;
  std::size_t top_k = 20;
  PairSimilarity similarity = PairSimilarity::kProduct;
  double smoothing = 0.0;
  ClosedFormOptions solver;
};

/// Lambda suggested for a vocabulary size: 0.5 for VRD-scale label sets
/// (at most 100 objects and 70 predicates), 0.3 for larger ones.
double default_lambda(std::size_t num_objects, std::size_t num_predicates);

struct PriorModel {
  std::size_t num_objects = 0;
  std::size_t num_predicates = 0;
  double lambda = 0.0;
  std::uint64_t vocab_hash = 0;
  std::string config_hash;
  /// Present only on freshly built models; prior files carry D_inf alone.
  FrequencyTable frequencies;
  SimilarityGraph similarity;
  Matrix d_inf;  // K x N^2
  std::vector<bool> zero_predicate_rows;

  double value(std::size_t predicate, std::size_t subject, std::size_t object) const;
  bool is_zero_row(std::size_t predicate) const { return zero_predicate_rows.at(predicate); }
};

PriorModel build_prior(const Dataset& dataset, const EmbeddingTable& embeddings,
                       const PriorOptions& options);

/// D_inf[p, index(cs, co)] by label; throws DataError for unknown labels.
double prior_lookup(const PriorModel& model, const Vocabulary& vocab, const std::string& subject,
                    const std::string& predicate, const std::string& object);

std::string format_prior(const PriorModel& model);
PriorModel parse_prior(const std::string& text);
void save_prior(const std::string& path, const PriorModel& model);
PriorModel load_prior(const std::string& path);

}  // namespace avr

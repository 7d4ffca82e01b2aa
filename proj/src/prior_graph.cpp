#include "avr/prior_graph.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "avr/error.hpp"
#include "avr/io_util.hpp"

namespace avr {

namespace {

constexpr std::string_view kPriorHeader = "avr-prior";
constexpr std::uint64_t kPriorVersion = 1;

void check_lambda(double lambda) {
  if (!(lambda >= 0.0) || !(lambda < 1.0)) {
    throw std::invalid_argument("random-walk lambda must lie in [0, 1), got " +
                                std::to_string(lambda));
  }
}

void check_walk_shapes(const Matrix& d0, const SparseMatrix& m) {
  if (m.rows() != m.cols() || d0.cols() != m.rows()) {
    throw std::invalid_argument("walk shapes incompatible: D0 is " + std::to_string(d0.rows()) +
                                "x" + std::to_string(d0.cols()) + ", M is " +
                                std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
}

/// out = lambda * D M + (1 - lambda) * D0
void walk_step(const Matrix& d, const Matrix& d0, const SparseMatrix& m, double lambda,
               Matrix& out) {
  for (std::size_t r = 0; r < d.rows(); ++r) {
    auto dst = out.row(r);
    const auto base = d0.row(r);
    for (std::size_t c = 0; c < dst.size(); ++c) dst[c] = (1.0 - lambda) * base[c];
    const auto src = d.row(r);
    for (std::size_t i = 0; i < src.size(); ++i) {
      const double w = lambda * src[i];
      if (w == 0.0) continue;
      m.for_each_in_row(i, [&](std::size_t j, double v) { dst[j] += w * v; });
    }
  }
}

double clamped_cosine(const Vector& a, const Vector& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / std::sqrt(na * nb), 0.0, 1.0);
}

}  // namespace

SparseMatrix::SparseMatrix(std::size_t cols, std::vector<std::vector<Entry>> rows) : cols_(cols) {
  row_ptr_.assign(1, 0);
  for (auto& row : rows) {
    std::sort(row.begin(), row.end(), [](const Entry& a, const Entry& b) { return a.col < b.col; });
    for (std::size_t k = 0; k < row.size(); ++k) {
      if (row[k].col >= cols) throw std::invalid_argument("sparse entry column out of range");
      if (k > 0 && row[k].col == row[k - 1].col) {
        throw std::invalid_argument("duplicate sparse entry");
      }
      col_idx_.push_back(row[k].col);
      values_.push_back(row[k].value);
    }
    row_ptr_.push_back(col_idx_.size());
  }
}

SparseMatrix SparseMatrix::identity(std::size_t n) {
  std::vector<std::vector<Entry>> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i].push_back({i, 1.0});
  return SparseMatrix(n, std::move(rows));
}

SparseMatrix SparseMatrix::from_dense(const Matrix& dense) {
  std::vector<std::vector<Entry>> rows(dense.rows());
  for (std::size_t r = 0; r < dense.rows(); ++r) {
    for (std::size_t c = 0; c < dense.cols(); ++c) {
      if (dense(r, c) != 0.0) rows[r].push_back({c, dense(r, c)});
    }
  }
  return SparseMatrix(dense.cols(), std::move(rows));
}

double SparseMatrix::row_sum(std::size_t r) const {
  double s = 0.0;
  for_each_in_row(r, [&](std::size_t, double v) { s += v; });
  return s;
}

Matrix SparseMatrix::to_dense() const {
  Matrix out(rows(), cols_);
  for (std::size_t r = 0; r < rows(); ++r) {
    for_each_in_row(r, [&](std::size_t c, double v) { out(r, c) = v; });
  }
  return out;
}

FrequencyTable build_d0(const Dataset& dataset, double smoothing) {
  if (smoothing < 0.0) throw std::invalid_argument("smoothing must be non-negative");
  const auto& vocab = dataset.vocab;
  const PairIndex pairs(vocab.num_objects());
  FrequencyTable table{Matrix(vocab.num_predicates(), pairs.size(), smoothing),
                       std::vector<bool>(vocab.num_predicates(), false)};
  for (const auto& img : dataset.images) {
    for (const auto& rel : img.relationships) {
      const auto cs = img.objects.at(rel.subject).class_index;
      const auto co = img.objects.at(rel.object).class_index;
      table.d0(rel.predicate, pairs.index(cs, co)) += 1.0;
    }
  }
  for (std::size_t p = 0; p < table.d0.rows(); ++p) {
    auto row = table.d0.row(p);
    double total = 0.0;
    for (double v : row) total += v;
    if (total == 0.0) {
      table.zero_rows[p] = true;
      continue;
    }
    for (double& v : row) v /= total;
  }
  return table;
}

SimilarityGraph build_m(const EmbeddingTable& embeddings, const Vocabulary& vocab,
                        std::size_t top_k, PairSimilarity similarity) {
  const std::size_t n = vocab.num_objects();
  const PairIndex pairs(n);
  std::vector<const Vector*> vecs;
  for (const auto& label : vocab.objects()) vecs.push_back(&embeddings.at(label));

  std::vector<double> cosine(n * n);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) cosine[a * n + b] = clamped_cosine(*vecs[a], *vecs[b]);
  }
  auto sim = [&](std::size_t i, std::size_t j) {
    const double first = cosine[pairs.subject(i) * n + pairs.subject(j)];
    const double second = cosine[pairs.object(i) * n + pairs.object(j)];
    return similarity == PairSimilarity::kProduct ? first * second : 0.5 * (first + second);
  };

  SimilarityGraph graph;
  graph.zero_rows.assign(pairs.size(), false);
  std::vector<std::vector<SparseMatrix::Entry>> rows(pairs.size());
  std::vector<SparseMatrix::Entry> candidates;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    candidates.clear();
    for (std::size_t j = 0; j < pairs.size(); ++j) {
      if (j == i) continue;
      const double v = sim(i, j);
      if (v > 0.0) candidates.push_back({j, v});
    }
    if (top_k > 0 && candidates.size() > top_k) {
      std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(top_k),
                        candidates.end(), [](const auto& a, const auto& b) {
                          return a.value > b.value || (a.value == b.value && a.col < b.col);
                        });
      candidates.resize(top_k);
    }
    auto& row = rows[i];
    const double self = sim(i, i);
    if (self > 0.0) row.push_back({i, self});
    row.insert(row.end(), candidates.begin(), candidates.end());
    double total = 0.0;
    for (const auto& e : row) total += e.value;
    if (total == 0.0) {
      graph.zero_rows[i] = true;
      row.clear();
      continue;
    }
    for (auto& e : row) e.value /= total;
  }
  graph.m = SparseMatrix(pairs.size(), std::move(rows));
  return graph;
}

Matrix walk_iterative(const Matrix& d0, const SparseMatrix& m, double lambda, std::size_t steps,
                      const std::function<void(std::size_t, const Matrix&)>& observer) {
  check_lambda(lambda);
  check_walk_shapes(d0, m);
  Matrix current = d0;
  Matrix next(d0.rows(), d0.cols());
  if (observer) observer(0, current);
  for (std::size_t t = 1; t <= steps; ++t) {
    walk_step(current, d0, m, lambda, next);
    std::swap(current, next);
    if (observer) observer(t, current);
  }
  return current;
}

Matrix walk_closed_form(const Matrix& d0, const SparseMatrix& m, double lambda,
                        const ClosedFormOptions& options) {
  check_lambda(lambda);
  check_walk_shapes(d0, m);
  if (lambda == 0.0) return d0;
  const std::size_t n = m.rows();
  const std::size_t k = d0.rows();

  if (n <= options.dense_limit) {
    // (I - lambda M)^T X = (1 - lambda) D0^T, X = D_inf^T.
    Eigen::MatrixXd system = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n),
                                                       static_cast<Eigen::Index>(n));
    for (std::size_t r = 0; r < n; ++r) {
      m.for_each_in_row(r, [&](std::size_t c, double v) {
        system(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(r)) -= lambda * v;
      });
    }
    Eigen::MatrixXd rhs(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
    for (std::size_t p = 0; p < k; ++p) {
      for (std::size_t c = 0; c < n; ++c) {
        rhs(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(p)) = (1.0 - lambda) * d0(p, c);
      }
    }
    const Eigen::MatrixXd solution = system.partialPivLu().solve(rhs);
    Matrix out(k, n);
    for (std::size_t p = 0; p < k; ++p) {
      for (std::size_t c = 0; c < n; ++c) {
        const double v = solution(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(p));
        if (!std::isfinite(v)) throw NumericError("closed-form walk produced a non-finite value");
        // Round-off can leave tiny negatives where the exact answer is zero.
        out(p, c) = std::abs(v) < 1e-15 ? 0.0 : v;
      }
    }
    return out;
  }

  // Large graphs: iterate to the fixed point. With M row-stochastic the error
  // after a step is bounded by lambda / (1 - lambda) times the step size.
  Matrix current = d0;
  Matrix next(k, n);
  for (std::size_t it = 0; it < options.max_iterations; ++it) {
    walk_step(current, d0, m, lambda, next);
    double delta = 0.0;
    for (std::size_t r = 0; r < k; ++r) {
      double row_delta = 0.0;
      for (std::size_t c = 0; c < n; ++c) row_delta += std::abs(next(r, c) - current(r, c));
      delta = std::max(delta, row_delta);
    }
    std::swap(current, next);
    if (lambda / (1.0 - lambda) * delta < options.tolerance) return current;
  }
  throw NumericError("random walk did not converge within " +
                     std::to_string(options.max_iterations) + " iterations");
}

double default_lambda(std::size_t num_objects, std::size_t num_predicates) {
  return (num_objects <= 100 && num_predicates <= 70) ? 0.5 : 0.3;
}

double PriorModel::value(std::size_t predicate, std::size_t subject, std::size_t object) const {
  if (predicate >= num_predicates || subject >= num_objects || object >= num_objects) {
    throw std::out_of_range("prior lookup index out of range");
  }
  return d_inf(predicate, PairIndex(num_objects).index(subject, object));
}

PriorModel build_prior(const Dataset& dataset, const EmbeddingTable& embeddings,
                       const PriorOptions& options) {
  check_lambda(options.lambda);
  PriorModel model;
  model.num_objects = dataset.vocab.num_objects();
  model.num_predicates = dataset.vocab.num_predicates();
  model.lambda = options.lambda;
  model.vocab_hash = dataset.vocab.hash();
  model.frequencies = build_d0(dataset, options.smoothing);
  model.similarity = build_m(embeddings, dataset.vocab, options.top_k, options.similarity);
  model.d_inf = walk_closed_form(model.frequencies.d0, model.similarity.m, options.lambda,
                                 options.solver);
  model.zero_predicate_rows = model.frequencies.zero_rows;
  return model;
}

double prior_lookup(const PriorModel& model, const Vocabulary& vocab, const std::string& subject,
                    const std::string& predicate, const std::string& object) {
  if (vocab.hash() != model.vocab_hash) {
    throw DataError("prior was built for a different vocabulary");
  }
  const auto s = vocab.object_index(subject);
  const auto o = vocab.object_index(object);
  const auto p = vocab.predicate_index(predicate);
  if (!s) throw DataError("unknown object label '" + subject + "'");
  if (!o) throw DataError("unknown object label '" + object + "'");
  if (!p) throw DataError("unknown predicate label '" + predicate + "'");
  return model.value(*p, *s, *o);
}

std::string format_prior(const PriorModel& model) {
  std::ostringstream out;
  out << kPriorHeader << ' ' << kPriorVersion << '\n';
  out << "objects " << model.num_objects << '\n';
  out << "predicates " << model.num_predicates << '\n';
  out << "lambda " << io::format_double(model.lambda) << '\n';
  out << "vocab_hash " << io::hex64(model.vocab_hash) << '\n';
  out << "config_hash " << (model.config_hash.empty() ? "-" : model.config_hash) << '\n';
  std::vector<std::size_t> zero;
  for (std::size_t p = 0; p < model.zero_predicate_rows.size(); ++p) {
    if (model.zero_predicate_rows[p]) zero.push_back(p);
  }
  out << "zero_predicates " << zero.size();
  for (auto p : zero) out << ' ' << p;
  out << '\n';
  std::size_t nnz = 0;
  for (double v : model.d_inf.values()) nnz += v != 0.0;
  out << "entries " << nnz << '\n';
  for (std::size_t r = 0; r < model.d_inf.rows(); ++r) {
    for (std::size_t c = 0; c < model.d_inf.cols(); ++c) {
      const double v = model.d_inf(r, c);
      if (v != 0.0) out << r << ' ' << c << ' ' << io::format_double(v) << '\n';
    }
  }
  return out.str();
}

PriorModel parse_prior(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto fields_of = [&](std::string_view keyword, std::size_t min_fields) {
    if (!std::getline(in, line)) {
      throw DataError("prior file truncated before '" + std::string(keyword) + "'");
    }
    ++line_no;
    auto f = io::split_ws(line);
    if (f.size() < min_fields || f[0] != keyword) {
      throw DataError("prior line " + std::to_string(line_no) + ": expected '" +
                      std::string(keyword) + "'");
    }
    return f;
  };
  PriorModel model;
  {
    auto f = fields_of(kPriorHeader, 2);
    if (io::parse_u64(f[1], "prior version") != kPriorVersion) {
      throw DataError("unsupported prior format version");
    }
  }
  model.num_objects = io::parse_u64(fields_of("objects", 2)[1], "objects");
  model.num_predicates = io::parse_u64(fields_of("predicates", 2)[1], "predicates");
  model.lambda = io::parse_double(fields_of("lambda", 2)[1], "lambda");
  {
    auto f = fields_of("vocab_hash", 2);
    if (f[1].size() != 16) throw DataError("prior vocab_hash must be 16 hex digits");
    model.vocab_hash = 0;
    for (char c : f[1]) {
      const auto digit = std::string_view("0123456789abcdef").find(c);
      if (digit == std::string_view::npos) throw DataError("prior vocab_hash is not hex");
      model.vocab_hash = (model.vocab_hash << 4) | digit;
    }
  }
  {
    auto f = fields_of("config_hash", 2);
    model.config_hash = f[1] == "-" ? "" : std::string(f[1]);
  }
  if (model.num_objects == 0 || model.num_predicates == 0) {
    throw DataError("prior file declares an empty vocabulary");
  }
  const std::size_t cols = model.num_objects * model.num_objects;
  model.zero_predicate_rows.assign(model.num_predicates, false);
  {
    auto f = fields_of("zero_predicates", 2);
    const auto count = io::parse_u64(f[1], "zero_predicates");
    if (f.size() != count + 2) throw DataError("zero_predicates count does not match its list");
    for (std::size_t i = 0; i < count; ++i) {
      const auto p = io::parse_u64(f[i + 2], "zero predicate index");
      if (p >= model.num_predicates) throw DataError("zero predicate index out of range");
      model.zero_predicate_rows[p] = true;
    }
  }
  const auto entries = io::parse_u64(fields_of("entries", 2)[1], "entries");
  model.d_inf = Matrix(model.num_predicates, cols);
  for (std::uint64_t e = 0; e < entries; ++e) {
    if (!std::getline(in, line)) throw DataError("prior file truncated inside entries");
    ++line_no;
    auto f = io::split_ws(line);
    if (f.size() != 3) {
      throw DataError("prior line " + std::to_string(line_no) + ": expected 'row col value'");
    }
    const auto r = io::parse_u64(f[0], "row");
    const auto c = io::parse_u64(f[1], "col");
    const double v = io::parse_double(f[2], "value");
    if (r >= model.num_predicates || c >= cols) {
      throw DataError("prior line " + std::to_string(line_no) + ": entry out of range");
    }
    if (!(v >= 0.0) || v > 1.0 + 1e-9) {
      throw DataError("prior line " + std::to_string(line_no) + ": value outside [0, 1]");
    }
    model.d_inf(r, c) = v;
  }
  while (std::getline(in, line)) {
    if (!io::split_ws(line).empty()) throw DataError("unexpected content after prior entries");
  }
  return model;
}

void save_prior(const std::string& path, const PriorModel& model) {
  io::write_file(path, format_prior(model));
}

PriorModel load_prior(const std::string& path) { return parse_prior(io::read_file(path)); }

}  // namespace avr

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace avr {

using Vector = std::vector<double>;

/// Dense row-major matrix of finite doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// out += W x
void add_matvec(std::span<double> out, const Matrix& w, std::span<const double> x);
/// out += W^T g
void add_matvec_transposed(std::span<double> out, const Matrix& w, std::span<const double> g);
/// G += g x^T
void add_outer(Matrix& grad, std::span<const double> g, std::span<const double> x);
/// out += v
void add_to(std::span<double> out, std::span<const double> v);

Vector relu(std::span<const double> v);
Vector softmax(std::span<const double> v);
double sigmoid(double x);
/// log(1 + e^x) without overflow.
double softplus(double x);

inline constexpr double kProbabilityFloor = 1e-12;

/// -log(max(probs[target], floor)).
double cross_entropy(std::span<const double> probs, std::size_t target,
                     double floor = kProbabilityFloor);

/// All randomness in the project flows through this. Draws are derived from
/// raw mt19937_64 output so results do not depend on the standard library's
/// distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  std::uint64_t next() { return engine_(); }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

/// Fills `m` uniformly in [-a, a], a = sqrt(6 / (fan_in + fan_out)).
void xavier_uniform(Matrix& m, Rng& rng);

using Gradients = std::map<std::string, Matrix>;

/// Named trainable parameters plus a momentum buffer per parameter.
class ParamStore {
 public:
  void add(const std::string& name, Matrix value);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const Matrix& get(const std::string& name) const;
  Matrix& get_mut(const std::string& name);
  const Matrix& velocity(const std::string& name) const;
  Matrix& velocity_mut(const std::string& name);

  const std::map<std::string, Matrix>& params() const { return params_; }
  std::vector<std::string> names() const;
  std::size_t parameter_count() const;

  /// Zero gradients shaped like every parameter.
  Gradients zero_gradients() const;

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    return a.params_ == b.params_;
  }

 private:
  std::map<std::string, Matrix> params_;
  std::map<std::string, Matrix> velocity_;
};

/// v <- momentum * v + grad; param <- param - lr * v.
/// Parameters without a gradient entry are left alone.
void sgd_step(ParamStore& store, const Gradients& grads, double lr, double momentum);

/// Accumulates `src` into `dst`, creating zero entries as needed.
void accumulate(Gradients& dst, const Gradients& src, double scale = 1.0);

/// Central-difference check of `analytic` against `loss` for every coordinate
/// of every parameter named in `analytic`. Returns the max over coordinates of
/// |a - n| / max(1e-8, |a| + |n|).
double grad_check(const std::function<double(const ParamStore&)>& loss, const ParamStore& store,
                  const Gradients& analytic, double eps = 1e-5);

struct Checkpoint {
  std::uint64_t seed = 0;
  std::map<std::string, std::string> metadata;
  ParamStore params;
};

/// Binary checkpoint container (see docs/formats.md). Values are stored as
/// little-endian float64 so the round trip is exact.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

}  // namespace avr

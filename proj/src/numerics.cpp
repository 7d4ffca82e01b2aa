#include "avr/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "avr/error.hpp"
#include "avr/io_util.hpp"

namespace avr {

namespace {

constexpr char kCheckpointMagic[8] = {'A', 'V', 'R', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw std::invalid_argument("matrix data length does not match shape");
  }
}

void add_matvec(std::span<double> out, const Matrix& w, std::span<const double> x) {
  if (out.size() != w.rows() || x.size() != w.cols()) {
    throw std::invalid_argument("matvec dimension mismatch: W is " + shape_str(w) + ", x has " +
                                std::to_string(x.size()) + ", out has " +
                                std::to_string(out.size()));
  }
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const auto row = w.row(r);
    double acc = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) acc += row[c] * x[c];
    out[r] += acc;
  }
}

void add_matvec_transposed(std::span<double> out, const Matrix& w, std::span<const double> g) {
  if (out.size() != w.cols() || g.size() != w.rows()) {
    throw std::invalid_argument("transposed matvec dimension mismatch");
  }
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const double gr = g[r];
    if (gr == 0.0) continue;
    const auto row = w.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) out[c] += row[c] * gr;
  }
}

void add_outer(Matrix& grad, std::span<const double> g, std::span<const double> x) {
  if (grad.rows() != g.size() || grad.cols() != x.size()) {
    throw std::invalid_argument("outer product dimension mismatch");
  }
  for (std::size_t r = 0; r < g.size(); ++r) {
    if (g[r] == 0.0) continue;
    auto row = grad.row(r);
    for (std::size_t c = 0; c < x.size(); ++c) row[c] += g[r] * x[c];
  }
}

void add_to(std::span<double> out, std::span<const double> v) {
  if (out.size() != v.size()) {
    throw std::invalid_argument("vector add dimension mismatch");
  }
  for (std::size_t i = 0; i < v.size(); ++i) out[i] += v[i];
}

Vector relu(std::span<const double> v) {
  Vector out(v.size());
  std::transform(v.begin(), v.end(), out.begin(), [](double x) { return x > 0.0 ? x : 0.0; });
  return out;
}

Vector softmax(std::span<const double> v) {
  if (v.empty()) {
    throw std::invalid_argument("softmax of an empty vector");
  }
  const double mx = *std::max_element(v.begin(), v.end());
  Vector out(v.size());
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    total += out[i];
  }
  for (double& p : out) p /= total;
  return out;
}

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double cross_entropy(std::span<const double> probs, std::size_t target, double floor) {
  if (target >= probs.size()) {
    throw std::out_of_range("cross_entropy target " + std::to_string(target) +
                            " out of range for " + std::to_string(probs.size()) + " classes");
  }
  return -std::log(std::max(probs[target], floor));
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  // Box-Muller; 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) {
    throw std::invalid_argument("Rng::below(0)");
  }
  // Rejection sampling to avoid modulo bias.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t v;
  do {
    v = engine_();
  } while (v >= limit);
  return v % n;
}

void xavier_uniform(Matrix& m, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  for (double& v : m.values()) v = rng.uniform(-a, a);
}

void ParamStore::add(const std::string& name, Matrix value) {
  if (contains(name)) {
    throw std::invalid_argument("duplicate parameter '" + name + "'");
  }
  velocity_.emplace(name, Matrix(value.rows(), value.cols()));
  params_.emplace(name, std::move(value));
}

const Matrix& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) {
    throw std::out_of_range("unknown parameter '" + name + "'");
  }
  return it->second;
}

Matrix& ParamStore::get_mut(const std::string& name) {
  return const_cast<Matrix&>(std::as_const(*this).get(name));
}

const Matrix& ParamStore::velocity(const std::string& name) const {
  auto it = velocity_.find(name);
  if (it == velocity_.end()) {
    throw std::out_of_range("unknown parameter '" + name + "'");
  }
  return it->second;
}

Matrix& ParamStore::velocity_mut(const std::string& name) {
  return const_cast<Matrix&>(std::as_const(*this).velocity(name));
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, m] : params_) n += m.size();
  return n;
}

Gradients ParamStore::zero_gradients() const {
  Gradients g;
  for (const auto& [name, m] : params_) g.emplace(name, Matrix(m.rows(), m.cols()));
  return g;
}

void sgd_step(ParamStore& store, const Gradients& grads, double lr, double momentum) {
  for (const auto& [name, g] : grads) {
    Matrix& p = store.get_mut(name);
    if (!p.same_shape(g)) {
      throw std::invalid_argument("gradient for '" + name + "' is " + shape_str(g) +
                                  " but parameter is " + shape_str(p));
    }
  }
  for (const auto& [name, g] : grads) {
    Matrix& p = store.get_mut(name);
    Matrix& v = store.velocity_mut(name);
    auto& pv = p.values();
    auto& vv = v.values();
    const auto& gv = g.values();
    for (std::size_t i = 0; i < pv.size(); ++i) {
      vv[i] = momentum * vv[i] + gv[i];
      pv[i] -= lr * vv[i];
    }
  }
}

void accumulate(Gradients& dst, const Gradients& src, double scale) {
  for (const auto& [name, g] : src) {
    auto it = dst.find(name);
    if (it == dst.end()) {
      it = dst.emplace(name, Matrix(g.rows(), g.cols())).first;
    } else if (!it->second.same_shape(g)) {
      throw std::invalid_argument("gradient shape mismatch for '" + name + "'");
    }
    auto& d = it->second.values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += scale * g.values()[i];
  }
}

double grad_check(const std::function<double(const ParamStore&)>& loss, const ParamStore& store,
                  const Gradients& analytic, double eps) {
  ParamStore probe = store;
  double worst = 0.0;
  for (const auto& [name, grad] : analytic) {
    Matrix& p = probe.get_mut(name);
    if (!p.same_shape(grad)) {
      throw std::invalid_argument("analytic gradient shape mismatch for '" + name + "'");
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p.values()[i];
      p.values()[i] = saved + eps;
      const double up = loss(probe);
      p.values()[i] = saved - eps;
      const double down = loss(probe);
      p.values()[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = grad.values()[i];
      const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::ostringstream out(std::ios::binary);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  io::write_u32(out, kCheckpointVersion);
  io::write_u64(out, ckpt.seed);
  io::write_u32(out, static_cast<std::uint32_t>(ckpt.metadata.size()));
  for (const auto& [k, v] : ckpt.metadata) {
    io::write_string(out, k);
    io::write_string(out, v);
  }
  const auto& params = ckpt.params.params();
  io::write_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, m] : params) {
    io::write_string(out, name);
    io::write_u32(out, static_cast<std::uint32_t>(m.rows()));
    io::write_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (double v : m.values()) io::write_f64(out, v);
  }
  return out.str();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  char magic[sizeof(kCheckpointMagic)];
  if (!in.read(magic, sizeof(magic)) ||
      !std::equal(std::begin(magic), std::end(magic), std::begin(kCheckpointMagic))) {
    throw DataError("not a checkpoint file (bad magic)");
  }
  const auto version = io::read_u32(in);
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.seed = io::read_u64(in);
  const auto n_meta = io::read_u32(in);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto k = io::read_string(in);
    auto v = io::read_string(in);
    ckpt.metadata.emplace(std::move(k), std::move(v));
  }
  const auto n_params = io::read_u32(in);
  for (std::uint32_t i = 0; i < n_params; ++i) {
    auto name = io::read_string(in);
    const auto rows = io::read_u32(in);
    const auto cols = io::read_u32(in);
    const std::size_t count = static_cast<std::size_t>(rows) * cols;
    if (count > bytes.size()) {
      throw DataError("checkpoint parameter '" + name + "' larger than file");
    }
    std::vector<double> data(count);
    for (auto& v : data) {
      v = io::read_f64(in);
      if (!std::isfinite(v)) {
        throw DataError("checkpoint parameter '" + name + "' holds a non-finite value");
      }
    }
    ckpt.params.add(name, Matrix(rows, cols, std::move(data)));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw DataError("trailing bytes after checkpoint payload");
  }
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  io::write_file(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) {
  return deserialize_checkpoint(io::read_file(path));
}

}  // namespace avr

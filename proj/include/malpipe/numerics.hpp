#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "malpipe/error.hpp"

namespace malpipe {

// Dense row-major matrix of 64-bit floats. Values are treated as immutable
// once an operation returns them; all operations are pure and reentrant.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // rows * cols entries, row-major

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  static Matrix identity(std::size_t n);
  // Builds a matrix from nested row lists; all rows must share a length.
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rws);

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const {
    return {data.data() + i * cols, cols};
  }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
  std::string shape_str() const;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);

// Row-wise softmax with per-row max subtraction, so large magnitudes never
// overflow. Every output row is nonnegative and sums to 1.
Matrix softmax_rows(const Matrix& m);

enum class Activation { Relu, Tanh, LeakyRelu };

Activation activation_from_string(std::string_view name);
std::string_view activation_name(Activation kind);

// Elementwise activation; leaky slope is fixed at 0.01.
Matrix activate(Activation kind, const Matrix& m);

struct EigResult {
  std::vector<double> values;  // descending
  Matrix vectors;              // column i pairs with values[i]; unit norm
};

// Symmetric eigendecomposition by cyclic Jacobi rotations. Input must be
// square and symmetric within 1e-9 per entry; iteration cap is 100 sweeps.
EigResult sym_eig(const Matrix& s);

// Cholesky factorization a = L L^T of a symmetric positive definite matrix.
// Exposed so callers can reuse the factor for several solves.
class Cholesky {
 public:
  explicit Cholesky(const Matrix& a);

  // Solves L y = b (columns independently).
  Matrix solve_lower(const Matrix& b) const;
  // Solves L^T x = b.
  Matrix solve_upper(const Matrix& b) const;
  // Solves a x = b.
  Matrix solve(const Matrix& b) const;

  const Matrix& lower() const { return l_; }

 private:
  Matrix l_;
};

// Solves a X = b for symmetric positive definite a via Cholesky.
Matrix solve_spd(const Matrix& a, const Matrix& b);

// Deterministic random source: xoshiro256** seeded through splitmix64.
// The same seed always reproduces the same stream of draws, on every
// platform, which is what keeps reports byte-stable across builds.
// Instances are single-owner; never share one across concurrent tasks.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  // Uniform in [0, 1), 53-bit resolution.
  double uniform();
  double uniform(double lo, double hi);
  // Standard normal via Box-Muller; the paired draw is cached.
  double normal();
  // Uniform integer in [0, n), rejection-sampled so it is unbiased.
  std::uint64_t below(std::uint64_t n);
  // Fisher-Yates permutation of [0, n).
  std::vector<std::size_t> permutation(std::size_t n);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[static_cast<std::size_t>(below(i))]);
    }
  }

 private:
  std::array<std::uint64_t, 4> state_{};
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

// Stable sub-seed derivation for per-class / per-trial streams.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace malpipe

#include <cmath>

#include "doctest.h"
#include "malpipe/numerics.hpp"
#include "oracles.hpp"

using namespace malpipe;

TEST_CASE("matmul identity and hand-checked products") {
  Matrix m = Matrix::from_rows({{1, 2}, {3, 4}});
  Matrix id = Matrix::identity(2);
  const Matrix lhs = matmul(id, m);
  for (std::size_t i = 0; i < m.data.size(); ++i) CHECK(lhs.data[i] == m.data[i]);

  const Matrix v = Matrix::from_rows({{1}, {1}});
  const Matrix prod = matmul(m, v);
  CHECK(prod(0, 0) == doctest::Approx(3.0));
  CHECK(prod(1, 0) == doctest::Approx(7.0));
}

TEST_CASE("matmul agrees with the triple-loop oracle") {
  Rng rng(7);
  const Matrix a = oracles::random_matrix(rng, 5, 7);
  const Matrix b = oracles::random_matrix(rng, 7, 3);
  const Matrix got = matmul(a, b);
  const Matrix want = oracles::matmul_triple_loop(a, b);
  for (std::size_t i = 0; i < got.data.size(); ++i)
    CHECK(std::abs(got.data[i] - want.data[i]) <= 1e-12);

  // Random small shapes.
  for (int round = 0; round < 30; ++round) {
    const std::size_t r = 2 + rng.below(7), k = 2 + rng.below(7), c = 2 + rng.below(7);
    const Matrix x = oracles::random_matrix(rng, r, k);
    const Matrix y = oracles::random_matrix(rng, k, c);
    const Matrix g = matmul(x, y);
    const Matrix w = oracles::matmul_triple_loop(x, y);
    for (std::size_t i = 0; i < g.data.size(); ++i)
      CHECK(std::abs(g.data[i] - w.data[i]) <= 1e-12);
  }
}

TEST_CASE("matmul shape error names both shapes") {
  const Matrix a(2, 3), b(2, 3);
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("2x3"), ShapeError);
}

TEST_CASE("softmax_rows basics") {
  {
    const Matrix m(1, 3, 0.0);
    const Matrix s = softmax_rows(m);
    for (double v : s.data) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }
  {
    const Matrix m = Matrix::from_rows({{std::log(2.0), 0.0}});
    const Matrix s = softmax_rows(m);
    CHECK(s(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
    CHECK(s(0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  }
  {
    const Matrix m = Matrix::from_rows({{1000.0, 1000.0}});
    const Matrix s = softmax_rows(m);
    CHECK(s(0, 0) == 0.5);
    CHECK(s(0, 1) == 0.5);
  }
}

TEST_CASE("softmax_rows rows sum to one across huge magnitudes") {
  Rng rng(11);
  for (int round = 0; round < 50; ++round) {
    const Matrix m = oracles::random_matrix(rng, 4, 6, -1e6, 1e6);
    const Matrix s = softmax_rows(m);
    for (std::size_t i = 0; i < s.rows; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < s.cols; ++j) {
        CHECK(s(i, j) >= 0.0);
        sum += s(i, j);
      }
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("activate kinds") {
  const Matrix m = Matrix::from_rows({{-1.0, 0.0, 2.0}});
  const Matrix r = activate(Activation::Relu, m);
  CHECK(r(0, 0) == 0.0);
  CHECK(r(0, 1) == 0.0);
  CHECK(r(0, 2) == 2.0);

  CHECK(activate(Activation::Tanh, Matrix(1, 1, 0.0))(0, 0) == 0.0);
  CHECK(activate(Activation::LeakyRelu, Matrix(1, 1, -2.0))(0, 0) ==
        doctest::Approx(-0.02));

  CHECK_THROWS_AS(activation_from_string("swish"), ConfigError);
}

TEST_CASE("sym_eig analytic cases") {
  {
    const Matrix d = Matrix::from_rows({{3, 0}, {0, 1}});
    const auto eig = sym_eig(d);
    CHECK(eig.values[0] == doctest::Approx(3.0));
    CHECK(eig.values[1] == doctest::Approx(1.0));
    CHECK(std::abs(eig.vectors(0, 0)) == doctest::Approx(1.0));
    CHECK(std::abs(eig.vectors(1, 1)) == doctest::Approx(1.0));
  }
  {
    const Matrix m = Matrix::from_rows({{2, 1}, {1, 2}});
    const auto eig = sym_eig(m);
    CHECK(eig.values[0] == doctest::Approx(3.0));
    CHECK(eig.values[1] == doctest::Approx(1.0));
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    CHECK(std::abs(eig.vectors(0, 0)) == doctest::Approx(inv_sqrt2));
    CHECK(std::abs(eig.vectors(1, 0)) == doctest::Approx(inv_sqrt2));
  }
}

TEST_CASE("sym_eig reconstruction, trace and orthogonality on random input") {
  Rng rng(13);
  for (int round = 0; round < 10; ++round) {
    const Matrix s = oracles::random_symmetric(rng, 6);
    const auto eig = sym_eig(s);

    double trace = 0.0, lambda_sum = 0.0;
    for (std::size_t i = 0; i < 6; ++i) {
      trace += s(i, i);
      lambda_sum += eig.values[i];
    }
    CHECK(std::abs(trace - lambda_sum) <= 1e-8);

    for (std::size_t i = 0; i + 1 < 6; ++i) CHECK(eig.values[i] >= eig.values[i + 1]);

    // V Lambda V^T reproduces the input.
    Matrix lambda(6, 6);
    for (std::size_t i = 0; i < 6; ++i) lambda(i, i) = eig.values[i];
    const Matrix recon =
        matmul(matmul(eig.vectors, lambda), transpose(eig.vectors));
    for (std::size_t i = 0; i < recon.data.size(); ++i)
      CHECK(std::abs(recon.data[i] - s.data[i]) <= 1e-8);

    const Matrix vtv = matmul(transpose(eig.vectors), eig.vectors);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 6; ++j)
        CHECK(std::abs(vtv(i, j) - (i == j ? 1.0 : 0.0)) <= 1e-8);
  }
}

TEST_CASE("sym_eig rejects bad input") {
  CHECK_THROWS_AS(sym_eig(Matrix(2, 3)), ShapeError);
  Matrix asym = Matrix::from_rows({{1, 2}, {3, 1}});
  CHECK_THROWS_AS(sym_eig(asym), ShapeError);
}

TEST_CASE("solve_spd basics and residual oracle") {
  {
    const Matrix b = Matrix::from_rows({{1, 2}, {3, 4}});
    const Matrix x = solve_spd(Matrix::identity(2), b);
    for (std::size_t i = 0; i < x.data.size(); ++i) CHECK(x.data[i] == b.data[i]);
  }
  {
    const Matrix a = Matrix::from_rows({{2, 0}, {0, 4}});
    const Matrix b = Matrix::from_rows({{2}, {8}});
    const Matrix x = solve_spd(a, b);
    CHECK(x(0, 0) == doctest::Approx(1.0));
    CHECK(x(1, 0) == doctest::Approx(2.0));
  }
  Rng rng(17);
  for (int round = 0; round < 10; ++round) {
    const Matrix a = oracles::random_spd(rng, 5);
    const Matrix b = oracles::random_matrix(rng, 5, 2);
    const Matrix x = solve_spd(a, b);
    const Matrix residual = matmul(a, x);
    double norm_b = 0.0, norm_r = 0.0;
    for (std::size_t i = 0; i < b.data.size(); ++i) {
      norm_b += b.data[i] * b.data[i];
      const double d = residual.data[i] - b.data[i];
      norm_r += d * d;
    }
    CHECK(std::sqrt(norm_r) <= 1e-8 * std::max(1.0, std::sqrt(norm_b)));
  }
}

TEST_CASE("solve_spd names the failing pivot") {
  Matrix not_spd = Matrix::from_rows({{1, 0}, {0, -1}});
  CHECK_THROWS_WITH_AS(solve_spd(not_spd, Matrix(2, 1)), doctest::Contains("index 1"),
                       NumericError);
}

TEST_CASE("rng streams are seed-deterministic") {
  Rng a(123), b(123), c(124);
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 100; ++i) {
    const auto va = a.next_u64();
    all_equal = all_equal && va == b.next_u64();
    any_diff = any_diff || va != c.next_u64();
  }
  CHECK(all_equal);
  CHECK(any_diff);

  Rng d(9), e(9);
  for (int i = 0; i < 50; ++i) {
    CHECK(d.uniform() == e.uniform());
    CHECK(d.normal() == e.normal());
  }
  CHECK(d.permutation(20) == e.permutation(20));
}

TEST_CASE("rng uniform range and normal moments smoke") {
  Rng rng(5);
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.05);
  CHECK(std::abs(sq / n - 1.0) < 0.05);
}

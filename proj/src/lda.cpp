#include "malpipe/lda.hpp"

#include <algorithm>
#include <cmath>

namespace malpipe::lda {

ScatterResult scatter_matrices(const Matrix& z, const std::vector<std::uint32_t>& y,
                               std::size_t n_classes) {
  if (z.rows != y.size())
    throw ShapeError("scatter_matrices: " + std::to_string(z.rows) + " rows vs " +
                     std::to_string(y.size()) + " labels");
  const std::size_t n = z.rows, d = z.cols;

  std::vector<std::size_t> counts(n_classes, 0);
  for (std::uint32_t c : y) counts.at(c)++;
  for (std::size_t c = 0; c < n_classes; ++c)
    if (counts[c] == 0)
      throw DataError("scatter_matrices: class " + std::to_string(c) + " is empty");

  ScatterResult r;
  r.class_means = Matrix(n_classes, d);
  r.global_mean = Matrix(1, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      r.class_means(y[i], j) += z(i, j);
      r.global_mean(0, j) += z(i, j);
    }
  for (std::size_t c = 0; c < n_classes; ++c)
    for (std::size_t j = 0; j < d; ++j)
      r.class_means(c, j) /= static_cast<double>(counts[c]);
  for (std::size_t j = 0; j < d; ++j) r.global_mean(0, j) /= static_cast<double>(n);

  r.s_w = Matrix(d, d);
  std::vector<double> diff(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) diff[j] = z(i, j) - r.class_means(y[i], j);
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = a; b < d; ++b) r.s_w(a, b) += diff[a] * diff[b];
  }
  r.s_b = Matrix(d, d);
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (std::size_t j = 0; j < d; ++j) diff[j] = r.class_means(c, j) - r.global_mean(0, j);
    const double nc = static_cast<double>(counts[c]);
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = a; b < d; ++b) r.s_b(a, b) += nc * diff[a] * diff[b];
  }
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a + 1; b < d; ++b) {
      r.s_w(b, a) = r.s_w(a, b);
      r.s_b(b, a) = r.s_b(a, b);
    }
  return r;
}

LdaModel fit(const Matrix& z, const std::vector<std::uint32_t>& y, std::size_t n_classes,
             std::size_t k, double epsilon) {
  const std::size_t d = z.cols;
  if (k == 0 || k > n_classes - 1 || k > d)
    throw ConfigError("lda fit: k=" + std::to_string(k) + " out of range (at most min(C-1=" +
                      std::to_string(n_classes - 1) + ", d=" + std::to_string(d) + "))");

  ScatterResult scat = scatter_matrices(z, y, n_classes);

  double trace_w = 0.0;
  for (std::size_t i = 0; i < d; ++i) trace_w += scat.s_w(i, i);
  if (epsilon <= 0.0) epsilon = 1e-4 * trace_w / static_cast<double>(d);
  if (epsilon <= 0.0) {
    // trace(S_w) == 0 happens with one point per class; keep the system SPD.
    epsilon = 1e-8;
  }

  Matrix shrunk = scat.s_w;
  for (std::size_t i = 0; i < d; ++i) shrunk(i, i) += epsilon;

  // Whitened symmetric route: eigenvectors of (S_w+eps I)^-1 S_b are
  // L^-T u where (L^-1 S_b L^-T) u = lambda u and L L^T = S_w + eps I.
  Cholesky chol = [&] {
    try {
      return Cholesky(shrunk);
    } catch (const NumericError&) {
      throw NumericError(
          "lda fit: within-class scatter is singular at the current shrinkage; "
          "pass a larger epsilon");
    }
  }();
  const Matrix y1 = chol.solve_lower(scat.s_b);          // L^-1 S_b
  Matrix b = chol.solve_lower(transpose(y1));            // L^-1 (L^-1 S_b)^T
  // Symmetrize away the last-ulp asymmetry before the Jacobi solver.
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j) {
      const double avg = 0.5 * (b(i, j) + b(j, i));
      b(i, j) = avg;
      b(j, i) = avg;
    }
  const EigResult eig = sym_eig(b);

  Matrix u_top(d, k);
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t i = 0; i < d; ++i) u_top(i, c) = eig.vectors(i, c);
  Matrix w = chol.solve_upper(u_top);

  for (std::size_t c = 0; c < k; ++c) {
    double norm = 0.0;
    for (std::size_t i = 0; i < d; ++i) norm += w(i, c) * w(i, c);
    norm = std::sqrt(norm);
    std::size_t arg = 0;
    for (std::size_t i = 1; i < d; ++i)
      if (std::abs(w(i, c)) > std::abs(w(arg, c))) arg = i;
    const double flip = w(arg, c) < 0.0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < d; ++i) w(i, c) *= flip / norm;
  }

  LdaModel m;
  m.w = std::move(w);
  m.global_mean = std::move(scat.global_mean);
  m.class_means = std::move(scat.class_means);
  m.epsilon = epsilon;
  m.k = k;
  return m;
}

Matrix transform(const LdaModel& model, const Matrix& z) {
  if (z.cols != model.w.rows)
    throw ShapeError("lda transform: input " + z.shape_str() + " vs projection " +
                     model.w.shape_str());
  return matmul(z, model.w);
}

}  // namespace malpipe::lda

#pragma once

#include <cstdint>
#include <vector>

#include "malpipe/numerics.hpp"

namespace malpipe::lda {

// Fisher discriminant projection: columns of w are the leading eigenvectors
// of (S_w + eps I)^-1 S_b, unit-norm, eigenvalue-descending, sign fixed so
// the largest-magnitude entry of each column is positive.
struct LdaModel {
  Matrix w;            // d x k
  Matrix global_mean;  // 1 x d
  Matrix class_means;  // C x d
  double epsilon = 0.0;
  std::size_t k = 0;
};

// S_w = sum_c sum_{i in c} (z_i - mu_c)(z_i - mu_c)^T,
// S_b = sum_c n_c (mu_c - mu)(mu_c - mu)^T. Both symmetric by construction.
struct ScatterResult {
  Matrix s_b;
  Matrix s_w;
  Matrix global_mean;  // 1 x d
  Matrix class_means;  // C x d
};

ScatterResult scatter_matrices(const Matrix& z, const std::vector<std::uint32_t>& y,
                               std::size_t n_classes);

// epsilon <= 0 selects the scale-aware default 1e-4 * trace(S_w) / d.
LdaModel fit(const Matrix& z, const std::vector<std::uint32_t>& y, std::size_t n_classes,
             std::size_t k, double epsilon = 0.0);

// y = z W.
Matrix transform(const LdaModel& model, const Matrix& z);

}  // namespace malpipe::lda

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "malpipe/numerics.hpp"

namespace malpipe::svm {

enum class KernelKind { Linear, Rbf };
enum class GammaMode { Scale, Auto, Explicit };

struct KernelSpec {
  KernelKind kind = KernelKind::Rbf;
  GammaMode gamma_mode = GammaMode::Scale;
  double gamma_value = 0.0;  // used when gamma_mode == Explicit

  void validate() const;
};

KernelKind kernel_from_string(std::string_view name);
std::string_view kernel_name(KernelKind kind);

// scale -> 1 / (d * var(x)) with variance over all entries; auto -> 1 / d.
double resolve_gamma(const KernelSpec& spec, const Matrix& x);

double kernel_eval(const KernelSpec& spec, double gamma, std::span<const double> u,
                   std::span<const double> v);

// One soft-margin machine: f(u) = sum_i coeff_i K(u, sv_i) + bias with
// coeff_i = alpha_i y_i over the support vectors (alpha_i > 0).
struct BinarySvm {
  Matrix support_vectors;
  std::vector<double> coefficients;
  double bias = 0.0;
  double gamma = 0.0;
  KernelSpec kernel;
};

struct SvmConfig {
  double c = 1.0;
  KernelSpec kernel;
  bool balanced = false;     // per-sample box C_i = c * w_class(i)
  double tol = 1e-3;
  std::size_t max_passes = 50;
  std::uint64_t seed = 0;
};

struct MulticlassSvm {
  std::vector<BinarySvm> machines;  // one-vs-rest, class order
  std::vector<std::string> class_names;
  SvmConfig config;
};

// Simplified SMO on the soft-margin dual: sweep for a KKT violator, pair it
// with a seeded random partner, clip the pair to its box, update the bias
// from the margin conditions. Terminates when a full pass makes no update or
// at max_passes. Labels must be -1/+1 with both present; box_c is per-sample.
BinarySvm smo_fit(const Matrix& x, const std::vector<double>& y,
                  const std::vector<double>& box_c, const KernelSpec& kernel, double tol,
                  std::size_t max_passes, std::uint64_t seed);

// Eq.-(7)-style margin at one point.
double decision(const BinarySvm& machine, std::span<const double> u);

// One binary machine per class with +1 for the class and -1 for the rest.
// The Gram matrix is precomputed once and shared across machines when
// N <= 10,000. Per-class partner streams derive from seed + class index.
MulticlassSvm fit_multiclass(const Matrix& x, const std::vector<std::uint32_t>& y,
                             const std::vector<std::string>& class_names,
                             const SvmConfig& config);

struct Prediction {
  std::vector<std::uint32_t> labels;
  Matrix scores;  // N x C margins
};

// Argmax of per-class margins; ties break to the lowest class index.
Prediction predict(const MulticlassSvm& model, const Matrix& x);

// Dual objective sum(alpha) - 1/2 sum_ij alpha_i alpha_j y_i y_j K_ij for a
// full alpha vector against training data (used by verification harnesses).
double dual_objective(const Matrix& x, const std::vector<double>& y,
                      const std::vector<double>& alpha, const KernelSpec& kernel,
                      double gamma);

// The alpha vector of the last smo_fit solution, aligned with training rows.
// Exposed for KKT verification.
struct SmoSolution {
  std::vector<double> alpha;
  double bias = 0.0;
  double gamma = 0.0;
};

SmoSolution smo_solve(const Matrix& x, const std::vector<double>& y,
                      const std::vector<double>& box_c, const KernelSpec& kernel, double tol,
                      std::size_t max_passes, std::uint64_t seed);

}  // namespace malpipe::svm

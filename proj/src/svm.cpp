#include "malpipe/svm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "malpipe/dataio.hpp"

namespace malpipe::svm {

void KernelSpec::validate() const {
  if (gamma_mode == GammaMode::Explicit && !(gamma_value > 0.0))
    throw ConfigError("kernel: explicit gamma must be positive");
}

KernelKind kernel_from_string(std::string_view name) {
  if (name == "linear") return KernelKind::Linear;
  if (name == "rbf") return KernelKind::Rbf;
  throw ConfigError("unknown kernel kind '" + std::string(name) + "' (expected linear|rbf)");
}

std::string_view kernel_name(KernelKind kind) {
  return kind == KernelKind::Linear ? "linear" : "rbf";
}

double resolve_gamma(const KernelSpec& spec, const Matrix& x) {
  spec.validate();
  if (x.rows == 0 || x.cols == 0) throw ShapeError("resolve_gamma: empty training matrix");
  switch (spec.gamma_mode) {
    case GammaMode::Explicit:
      return spec.gamma_value;
    case GammaMode::Auto:
      return 1.0 / static_cast<double>(x.cols);
    case GammaMode::Scale: {
      double mean = 0.0;
      for (double v : x.data) mean += v;
      mean /= static_cast<double>(x.data.size());
      double var = 0.0;
      for (double v : x.data) var += (v - mean) * (v - mean);
      var /= static_cast<double>(x.data.size());
      if (var <= 0.0)
        throw NumericError("resolve_gamma: zero variance under 'scale'; pass an explicit gamma");
      return 1.0 / (static_cast<double>(x.cols) * var);
    }
  }
  throw ConfigError("resolve_gamma: bad gamma mode");
}

double kernel_eval(const KernelSpec& spec, double gamma, std::span<const double> u,
                   std::span<const double> v) {
  if (u.size() != v.size())
    throw ShapeError("kernel_eval: widths differ, " + std::to_string(u.size()) + " vs " +
                     std::to_string(v.size()));
  if (spec.kind == KernelKind::Linear) {
    double dot = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) dot += u[i] * v[i];
    return dot;
  }
  double dist2 = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double d = u[i] - v[i];
    dist2 += d * d;
  }
  return std::exp(-gamma * dist2);
}

namespace {

constexpr std::size_t kGramLimit = 10000;

// Kernel access that is either a precomputed Gram matrix or on-the-fly rows.
class KernelTable {
 public:
  KernelTable(const Matrix& x, const KernelSpec& spec, double gamma)
      : x_(x), spec_(spec), gamma_(gamma) {
    if (x.rows <= kGramLimit) {
      gram_ = Matrix(x.rows, x.rows);
      for (std::size_t i = 0; i < x.rows; ++i) {
        for (std::size_t j = i; j < x.rows; ++j) {
          const double v = kernel_eval(spec, gamma, x.row(i), x.row(j));
          (*gram_)(i, j) = v;
          (*gram_)(j, i) = v;
        }
      }
    }
  }

  double at(std::size_t i, std::size_t j) const {
    if (gram_) return (*gram_)(i, j);
    return kernel_eval(spec_, gamma_, x_.row(i), x_.row(j));
  }

 private:
  const Matrix& x_;
  KernelSpec spec_;
  double gamma_;
  std::optional<Matrix> gram_;
};

struct SmoState {
  std::vector<double> alpha;
  std::vector<double> margin;  // f(x_i) - b, maintained incrementally
  double bias = 0.0;
};

// Exact maximizer of the pair (i, j) coordinate slice. Returns false when
// the pair cannot move (degenerate box, or flat objective with zero slope).
bool update_pair(SmoState& st, const KernelTable& k, const std::vector<double>& y,
                 const std::vector<double>& box_c, std::size_t i, std::size_t j,
                 double min_step) {
  if (i == j) return false;
  const double ai_old = st.alpha[i], aj_old = st.alpha[j];
  double lo, hi;
  if (y[i] != y[j]) {
    lo = std::max(0.0, aj_old - ai_old);
    hi = std::min(box_c[j], box_c[i] + aj_old - ai_old);
  } else {
    lo = std::max(0.0, ai_old + aj_old - box_c[i]);
    hi = std::min(box_c[j], ai_old + aj_old);
  }
  if (lo >= hi) return false;

  const double eta = k.at(i, i) + k.at(j, j) - 2.0 * k.at(i, j);
  const double ei = st.margin[i] + st.bias - y[i];
  const double ej = st.margin[j] + st.bias - y[j];
  const double slope = y[j] * (ei - ej);  // dW/d alpha_j along the pair line

  double aj;
  if (eta > 0.0) {
    aj = std::clamp(aj_old + slope / eta, lo, hi);
  } else {
    // Duplicate or kernel-degenerate pair: W is linear along the line, so
    // the maximum sits at whichever endpoint the slope points to.
    if (slope > 0.0) aj = hi;
    else if (slope < 0.0) aj = lo;
    else return false;
  }
  if (std::abs(aj - aj_old) < min_step) return false;
  const double ai = ai_old + y[i] * y[j] * (aj_old - aj);

  st.alpha[i] = ai;
  st.alpha[j] = aj;

  const double di = y[i] * (ai - ai_old);
  const double dj = y[j] * (aj - aj_old);
  for (std::size_t t = 0; t < st.margin.size(); ++t)
    st.margin[t] += di * k.at(i, t) + dj * k.at(j, t);

  const double b1 = st.bias - ei - di * k.at(i, i) - dj * k.at(i, j);
  const double b2 = st.bias - ej - di * k.at(i, j) - dj * k.at(j, j);
  if (ai > 0.0 && ai < box_c[i])
    st.bias = b1;
  else if (aj > 0.0 && aj < box_c[j])
    st.bias = b2;
  else
    st.bias = 0.5 * (b1 + b2);
  return true;
}

SmoSolution smo_core(const Matrix& x, const std::vector<double>& y,
                     const std::vector<double>& box_c, const KernelTable& k,
                     double gamma, double tol, std::size_t max_passes,
                     std::uint64_t seed) {
  const std::size_t n = x.rows;
  bool pos = false, neg = false;
  for (double v : y) (v > 0 ? pos : neg) = true;
  if (!pos || !neg) throw DataError("smo_fit: both labels must be present");
  if (y.size() != n || box_c.size() != n)
    throw ShapeError("smo_fit: label/box lengths do not match rows");

  SmoState st;
  st.alpha.assign(n, 0.0);
  st.margin.assign(n, 0.0);
  Rng rng(seed);
  const double min_step = 1e-12;

  for (std::size_t pass = 0; pass < max_passes; ++pass) {
    std::size_t changed = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double yf = y[i] * (st.margin[i] + st.bias);
      const bool violates = (yf < 1.0 - tol && st.alpha[i] < box_c[i]) ||
                            (yf > 1.0 + tol && st.alpha[i] > 0.0);
      if (!violates) continue;
      // Try partners in seeded random order until one can move; a pass with
      // zero updates then means no violator has any productive partner.
      const auto partners = rng.permutation(n);
      for (std::size_t j : partners) {
        if (update_pair(st, k, y, box_c, i, j, min_step)) {
          ++changed;
          break;
        }
      }
    }
    if (changed == 0) break;
  }

  // Final bias from the KKT interval at the solution: free vectors pin it,
  // bound vectors only bracket it. The running Platt estimate drifts on
  // problems whose support vectors all sit at bounds.
  {
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
    double free_sum = 0.0;
    std::size_t free_count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = y[i] - st.margin[i];
      const double bound_eps = 1e-9 * std::max(1.0, box_c[i]);
      if (st.alpha[i] > bound_eps && st.alpha[i] < box_c[i] - bound_eps) {
        free_sum += v;
        ++free_count;
      } else if ((st.alpha[i] <= bound_eps && y[i] > 0.0) ||
                 (st.alpha[i] >= box_c[i] - bound_eps && y[i] < 0.0)) {
        lo = std::max(lo, v);
      } else {
        hi = std::min(hi, v);
      }
    }
    if (free_count > 0) st.bias = free_sum / static_cast<double>(free_count);
    else if (std::isfinite(lo) && std::isfinite(hi)) st.bias = 0.5 * (lo + hi);
    else if (std::isfinite(lo)) st.bias = lo;
    else if (std::isfinite(hi)) st.bias = hi;
  }

  SmoSolution sol;
  sol.alpha = std::move(st.alpha);
  sol.bias = st.bias;
  sol.gamma = gamma;
  return sol;
}

BinarySvm pack_machine(const Matrix& x, const std::vector<double>& y, const SmoSolution& sol,
                       const KernelSpec& kernel) {
  BinarySvm m;
  m.kernel = kernel;
  m.gamma = sol.gamma;
  m.bias = sol.bias;
  std::size_t n_sv = 0;
  for (double a : sol.alpha)
    if (a > 0.0) ++n_sv;
  m.support_vectors = Matrix(n_sv, x.cols);
  m.coefficients.reserve(n_sv);
  std::size_t r = 0;
  for (std::size_t i = 0; i < sol.alpha.size(); ++i) {
    if (sol.alpha[i] <= 0.0) continue;
    const auto src = x.row(i);
    std::copy(src.begin(), src.end(), m.support_vectors.row(r).begin());
    m.coefficients.push_back(sol.alpha[i] * y[i]);
    ++r;
  }
  return m;
}

}  // namespace

SmoSolution smo_solve(const Matrix& x, const std::vector<double>& y,
                      const std::vector<double>& box_c, const KernelSpec& kernel, double tol,
                      std::size_t max_passes, std::uint64_t seed) {
  const double gamma = resolve_gamma(kernel, x);
  KernelTable table(x, kernel, gamma);
  return smo_core(x, y, box_c, table, gamma, tol, max_passes, seed);
}

BinarySvm smo_fit(const Matrix& x, const std::vector<double>& y,
                  const std::vector<double>& box_c, const KernelSpec& kernel, double tol,
                  std::size_t max_passes, std::uint64_t seed) {
  return pack_machine(x, y, smo_solve(x, y, box_c, kernel, tol, max_passes, seed), kernel);
}

double decision(const BinarySvm& machine, std::span<const double> u) {
  if (machine.support_vectors.rows > 0 && u.size() != machine.support_vectors.cols)
    throw ShapeError("decision: point width " + std::to_string(u.size()) +
                     " vs support vectors " + machine.support_vectors.shape_str());
  double f = machine.bias;
  for (std::size_t i = 0; i < machine.support_vectors.rows; ++i)
    f += machine.coefficients[i] *
         kernel_eval(machine.kernel, machine.gamma, u, machine.support_vectors.row(i));
  return f;
}

MulticlassSvm fit_multiclass(const Matrix& x, const std::vector<std::uint32_t>& y,
                             const std::vector<std::string>& class_names,
                             const SvmConfig& config) {
  const std::size_t n_classes = class_names.size();
  if (n_classes < 2) throw ConfigError("fit_multiclass: need at least two classes");
  std::vector<double> weights(n_classes, 1.0);
  if (config.balanced) weights = dataio::class_weights(y, n_classes);
  else {
    std::vector<std::size_t> counts(n_classes, 0);
    for (std::uint32_t c : y) counts.at(c)++;
    for (std::size_t c = 0; c < n_classes; ++c)
      if (counts[c] == 0)
        throw DataError("fit_multiclass: class " + std::to_string(c) + " has no samples");
  }

  const double gamma = resolve_gamma(config.kernel, x);
  KernelSpec resolved = config.kernel;
  resolved.gamma_mode = GammaMode::Explicit;
  resolved.gamma_value = gamma;
  KernelTable table(x, config.kernel, gamma);

  MulticlassSvm model;
  model.class_names = class_names;
  model.config = config;
  model.machines.reserve(n_classes);
  std::vector<double> labels(x.rows), box(x.rows);
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (std::size_t i = 0; i < x.rows; ++i) {
      labels[i] = y[i] == c ? 1.0 : -1.0;
      box[i] = config.c * weights[y[i]];
    }
    auto sol = smo_core(x, labels, box, table, gamma, config.tol, config.max_passes,
                        config.seed + c);
    model.machines.push_back(pack_machine(x, labels, sol, resolved));
  }
  return model;
}

Prediction predict(const MulticlassSvm& model, const Matrix& x) {
  const std::size_t n_classes = model.machines.size();
  Prediction p;
  p.scores = Matrix(x.rows, n_classes);
  p.labels.resize(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t c = 0; c < n_classes; ++c)
      p.scores(i, c) = decision(model.machines[c], x.row(i));
    std::size_t best = 0;
    for (std::size_t c = 1; c < n_classes; ++c)
      if (p.scores(i, c) > p.scores(i, best)) best = c;
    p.labels[i] = static_cast<std::uint32_t>(best);
  }
  return p;
}

double dual_objective(const Matrix& x, const std::vector<double>& y,
                      const std::vector<double>& alpha, const KernelSpec& kernel,
                      double gamma) {
  double obj = 0.0;
  for (double a : alpha) obj += a;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    if (alpha[i] == 0.0) continue;
    for (std::size_t j = 0; j < alpha.size(); ++j) {
      if (alpha[j] == 0.0) continue;
      obj -= 0.5 * alpha[i] * alpha[j] * y[i] * y[j] *
             kernel_eval(kernel, gamma, x.row(i), x.row(j));
    }
  }
  return obj;
}

}  // namespace malpipe::svm

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "malpipe/numerics.hpp"

namespace malpipe::analysis {

struct ConfusionMatrix {
  std::vector<std::vector<std::uint64_t>> counts;  // [true][pred]
  std::vector<std::string> class_names;

  std::size_t size() const { return counts.size(); }
  std::uint64_t total() const;
};

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t support = 0;
};

struct PrCurve {
  std::vector<double> recall;
  std::vector<double> precision;
  double average_precision = 0.0;
};

struct EvalReport {
  std::vector<ClassMetrics> per_class;
  double accuracy = 0.0;
  ClassMetrics macro_avg;     // support = N
  ClassMetrics weighted_avg;  // support = N
  std::vector<PrCurve> pr;    // empty curve for classes without positives
  std::vector<std::string> class_names;
};

struct Explanation {
  std::vector<double> instance;
  std::vector<double> baseline;
  std::vector<double> phi;
  double base_value = 0.0;    // f(baseline)
  double output_value = 0.0;  // f(instance)
};

ConfusionMatrix confusion(const std::vector<std::uint32_t>& y_true,
                          const std::vector<std::uint32_t>& y_pred,
                          const std::vector<std::string>& class_names);

// precision_c = cm[c][c] / column sum, recall_c = cm[c][c] / row sum,
// F1 = 2PR/(P+R); zero denominators yield 0 by convention.
EvalReport metrics(const ConfusionMatrix& cm);

// Precision-recall sweep over descending unique scores; ties at a threshold
// are processed together. AP = sum_n (R_n - R_{n-1}) P_n.
PrCurve pr_curve(const std::vector<double>& scores, const std::vector<bool>& truth);

using ScalarFn = std::function<double(std::span<const double>)>;

// Exact Shapley values by coalition enumeration; d <= 16. Absent features
// take baseline values. Satisfies the efficiency axiom to roundoff.
Explanation shapley_exact(const ScalarFn& f, const std::vector<double>& baseline,
                          const std::vector<double>& instance);

// Monte-Carlo Shapley over seeded random permutations; efficiency holds in
// expectation.
Explanation shapley_sample(const ScalarFn& f, const std::vector<double>& baseline,
                           const std::vector<double>& instance, std::size_t n_permutations,
                           std::uint64_t seed);

struct ImportanceEntry {
  std::size_t feature = 0;
  double mean_abs_phi = 0.0;
};

// Mean |phi| per feature, descending, ties to the lower feature index.
std::vector<ImportanceEntry> global_importance(const std::vector<Explanation>& explanations);

// --- plot-data exports -------------------------------------------------

// Delimiter-separated text with a header row; numbers are shortest
// round-trip decimals, so re-exporting a payload is byte-identical.
void export_beeswarm(const std::vector<Explanation>& explanations,
                     const std::vector<std::string>& feature_names,
                     const std::filesystem::path& path);
// Ordered by |phi| descending; the last cumulative value equals f(instance).
void export_waterfall(const Explanation& explanation,
                      const std::vector<std::string>& feature_names,
                      const std::filesystem::path& path);
void export_bar(const std::vector<ImportanceEntry>& importances,
                const std::vector<std::string>& feature_names,
                const std::filesystem::path& path);
void export_pr(const std::vector<PrCurve>& curves, const std::vector<std::string>& class_names,
               const std::filesystem::path& path);
void export_confusion(const ConfusionMatrix& cm, const std::filesystem::path& path);

void export_metrics(const EvalReport& report, const std::filesystem::path& path);
void export_summary(const EvalReport& report, const std::filesystem::path& path);

}  // namespace malpipe::analysis

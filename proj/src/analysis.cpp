#include "malpipe/analysis.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>

#include "malpipe/text.hpp"

namespace malpipe::analysis {

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (const auto& row : counts)
    for (std::uint64_t v : row) t += v;
  return t;
}

ConfusionMatrix confusion(const std::vector<std::uint32_t>& y_true,
                          const std::vector<std::uint32_t>& y_pred,
                          const std::vector<std::string>& class_names) {
  if (y_true.size() != y_pred.size())
    throw ShapeError("confusion: " + std::to_string(y_true.size()) + " truths vs " +
                     std::to_string(y_pred.size()) + " predictions");
  const std::size_t c = class_names.size();
  ConfusionMatrix cm;
  cm.class_names = class_names;
  cm.counts.assign(c, std::vector<std::uint64_t>(c, 0));
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] >= c || y_pred[i] >= c)
      throw DataError("confusion: label out of range at row " + std::to_string(i));
    cm.counts[y_true[i]][y_pred[i]]++;
  }
  return cm;
}

EvalReport metrics(const ConfusionMatrix& cm) {
  const std::size_t c = cm.size();
  EvalReport r;
  r.class_names = cm.class_names;
  r.per_class.resize(c);

  std::uint64_t total = 0, diag = 0;
  for (std::size_t t = 0; t < c; ++t)
    for (std::size_t p = 0; p < c; ++p) total += cm.counts[t][p];

  for (std::size_t k = 0; k < c; ++k) {
    std::uint64_t col = 0, row = 0;
    for (std::size_t t = 0; t < c; ++t) col += cm.counts[t][k];
    for (std::size_t p = 0; p < c; ++p) row += cm.counts[k][p];
    const double tp = static_cast<double>(cm.counts[k][k]);
    diag += cm.counts[k][k];

    ClassMetrics& m = r.per_class[k];
    m.support = row;
    m.precision = col > 0 ? tp / static_cast<double>(col) : 0.0;
    m.recall = row > 0 ? tp / static_cast<double>(row) : 0.0;
    m.f1 = (m.precision + m.recall) > 0.0
               ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
               : 0.0;
  }
  r.accuracy = total > 0 ? static_cast<double>(diag) / static_cast<double>(total) : 0.0;

  r.macro_avg.support = total;
  r.weighted_avg.support = total;
  for (std::size_t k = 0; k < c; ++k) {
    r.macro_avg.precision += r.per_class[k].precision;
    r.macro_avg.recall += r.per_class[k].recall;
    r.macro_avg.f1 += r.per_class[k].f1;
    const double w = static_cast<double>(r.per_class[k].support);
    r.weighted_avg.precision += w * r.per_class[k].precision;
    r.weighted_avg.recall += w * r.per_class[k].recall;
    r.weighted_avg.f1 += w * r.per_class[k].f1;
  }
  if (c > 0) {
    r.macro_avg.precision /= static_cast<double>(c);
    r.macro_avg.recall /= static_cast<double>(c);
    r.macro_avg.f1 /= static_cast<double>(c);
  }
  if (total > 0) {
    r.weighted_avg.precision /= static_cast<double>(total);
    r.weighted_avg.recall /= static_cast<double>(total);
    r.weighted_avg.f1 /= static_cast<double>(total);
  }
  return r;
}

PrCurve pr_curve(const std::vector<double>& scores, const std::vector<bool>& truth) {
  if (scores.size() != truth.size())
    throw ShapeError("pr_curve: " + std::to_string(scores.size()) + " scores vs " +
                     std::to_string(truth.size()) + " truths");
  std::size_t positives = 0;
  for (bool t : truth) positives += t ? 1 : 0;
  if (positives == 0) throw DataError("pr_curve: no positive samples");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  PrCurve out;
  double tp = 0.0, fp = 0.0, prev_recall = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    // Everything tied at this threshold enters at once.
    const double threshold = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == threshold; ++i) {
      if (truth[order[i]]) tp += 1.0;
      else fp += 1.0;
    }
    const double recall = tp / static_cast<double>(positives);
    const double precision = tp / (tp + fp);
    out.recall.push_back(recall);
    out.precision.push_back(precision);
    out.average_precision += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return out;
}

Explanation shapley_exact(const ScalarFn& f, const std::vector<double>& baseline,
                          const std::vector<double>& instance) {
  const std::size_t d = instance.size();
  if (baseline.size() != d)
    throw ShapeError("shapley_exact: baseline width " + std::to_string(baseline.size()) +
                     " vs instance " + std::to_string(d));
  if (d > 16)
    throw ConfigError("shapley_exact enumerates 2^d coalitions and is capped at d=16; "
                      "use shapley_sample for " + std::to_string(d) + " features");

  const std::size_t n_masks = std::size_t{1} << d;
  std::vector<double> value(n_masks);
  std::vector<double> point(d);
  for (std::size_t mask = 0; mask < n_masks; ++mask) {
    for (std::size_t j = 0; j < d; ++j)
      point[j] = (mask >> j) & 1 ? instance[j] : baseline[j];
    value[mask] = f(point);
  }

  // weight(s) = s! (d-1-s)! / d! for a coalition of size s not containing j.
  std::vector<double> factorial(d + 1, 1.0);
  for (std::size_t i = 1; i <= d; ++i) factorial[i] = factorial[i - 1] * static_cast<double>(i);
  std::vector<double> weight(d);
  for (std::size_t s = 0; s < d; ++s)
    weight[s] = factorial[s] * factorial[d - 1 - s] / factorial[d];

  Explanation ex;
  ex.instance = instance;
  ex.baseline = baseline;
  ex.phi.assign(d, 0.0);
  for (std::size_t mask = 0; mask < n_masks; ++mask) {
    const auto size = static_cast<std::size_t>(std::popcount(mask));
    for (std::size_t j = 0; j < d; ++j) {
      if ((mask >> j) & 1) continue;
      ex.phi[j] += weight[size] * (value[mask | (std::size_t{1} << j)] - value[mask]);
    }
  }
  ex.base_value = value[0];
  ex.output_value = value[n_masks - 1];
  return ex;
}

Explanation shapley_sample(const ScalarFn& f, const std::vector<double>& baseline,
                           const std::vector<double>& instance, std::size_t n_permutations,
                           std::uint64_t seed) {
  const std::size_t d = instance.size();
  if (baseline.size() != d)
    throw ShapeError("shapley_sample: baseline width " + std::to_string(baseline.size()) +
                     " vs instance " + std::to_string(d));
  if (n_permutations < 1) throw ConfigError("shapley_sample: need at least one permutation");

  Explanation ex;
  ex.instance = instance;
  ex.baseline = baseline;
  ex.phi.assign(d, 0.0);
  ex.base_value = f(baseline);
  ex.output_value = f(instance);

  Rng rng(seed);
  std::vector<double> point(d);
  for (std::size_t p = 0; p < n_permutations; ++p) {
    const auto perm = rng.permutation(d);
    point = baseline;
    double prev = ex.base_value;
    for (std::size_t j : perm) {
      point[j] = instance[j];
      const double cur = f(point);
      ex.phi[j] += cur - prev;
      prev = cur;
    }
  }
  for (double& v : ex.phi) v /= static_cast<double>(n_permutations);
  return ex;
}

std::vector<ImportanceEntry> global_importance(const std::vector<Explanation>& explanations) {
  if (explanations.empty()) throw DataError("global_importance: no explanations");
  const std::size_t d = explanations[0].phi.size();
  for (const auto& ex : explanations)
    if (ex.phi.size() != d)
      throw ShapeError("global_importance: explanations have mixed feature counts");

  std::vector<ImportanceEntry> out(d);
  for (std::size_t j = 0; j < d; ++j) out[j].feature = j;
  for (const auto& ex : explanations)
    for (std::size_t j = 0; j < d; ++j) out[j].mean_abs_phi += std::abs(ex.phi[j]);
  for (auto& e : out) e.mean_abs_phi /= static_cast<double>(explanations.size());
  std::stable_sort(out.begin(), out.end(), [](const ImportanceEntry& a, const ImportanceEntry& b) {
    return a.mean_abs_phi > b.mean_abs_phi;
  });
  return out;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write file: " + path.string());
  return out;
}

}  // namespace

void export_beeswarm(const std::vector<Explanation>& explanations,
                     const std::vector<std::string>& feature_names,
                     const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "instance,feature,phi,value\n";
  for (std::size_t i = 0; i < explanations.size(); ++i) {
    const auto& ex = explanations[i];
    for (std::size_t j = 0; j < ex.phi.size(); ++j)
      out << i << ',' << feature_names.at(j) << ',' << format_double(ex.phi[j]) << ','
          << format_double(ex.instance[j]) << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

void export_waterfall(const Explanation& explanation,
                      const std::vector<std::string>& feature_names,
                      const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "feature,phi,cumulative\n";
  out << "base,," << format_double(explanation.base_value) << '\n';
  std::vector<std::size_t> order(explanation.phi.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(explanation.phi[a]) > std::abs(explanation.phi[b]);
  });
  double cum = explanation.base_value;
  for (std::size_t j : order) {
    cum += explanation.phi[j];
    out << feature_names.at(j) << ',' << format_double(explanation.phi[j]) << ','
        << format_double(cum) << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

void export_bar(const std::vector<ImportanceEntry>& importances,
                const std::vector<std::string>& feature_names,
                const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "feature,mean_abs_phi\n";
  for (const auto& e : importances)
    out << feature_names.at(e.feature) << ',' << format_double(e.mean_abs_phi) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

void export_pr(const std::vector<PrCurve>& curves, const std::vector<std::string>& class_names,
               const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "class,recall,precision\n";
  for (std::size_t c = 0; c < curves.size(); ++c)
    for (std::size_t i = 0; i < curves[c].recall.size(); ++i)
      out << class_names.at(c) << ',' << format_double(curves[c].recall[i]) << ','
          << format_double(curves[c].precision[i]) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

void export_confusion(const ConfusionMatrix& cm, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "true_class,predicted_class,count\n";
  for (std::size_t t = 0; t < cm.size(); ++t)
    for (std::size_t p = 0; p < cm.size(); ++p)
      out << cm.class_names[t] << ',' << cm.class_names[p] << ',' << cm.counts[t][p] << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

void export_metrics(const EvalReport& report, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "class,precision,recall,f1,support,average_precision\n";
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    const auto& m = report.per_class[c];
    out << report.class_names[c] << ',' << format_double(m.precision) << ','
        << format_double(m.recall) << ',' << format_double(m.f1) << ',' << m.support << ',';
    if (c < report.pr.size() && !report.pr[c].recall.empty())
      out << format_double(report.pr[c].average_precision);
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

void export_summary(const EvalReport& report, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "metric,value\n";
  out << "accuracy," << format_double(report.accuracy) << '\n';
  out << "macro_precision," << format_double(report.macro_avg.precision) << '\n';
  out << "macro_recall," << format_double(report.macro_avg.recall) << '\n';
  out << "macro_f1," << format_double(report.macro_avg.f1) << '\n';
  out << "weighted_precision," << format_double(report.weighted_avg.precision) << '\n';
  out << "weighted_recall," << format_double(report.weighted_avg.recall) << '\n';
  out << "weighted_f1," << format_double(report.weighted_avg.f1) << '\n';
  out << "samples," << report.weighted_avg.support << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace malpipe::analysis

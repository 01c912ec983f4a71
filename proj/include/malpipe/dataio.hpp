#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "malpipe/numerics.hpp"

namespace malpipe::dataio {

// One table cell: a number, free text, or missing.
struct Cell {
  enum class Kind : std::uint8_t { Number, Text, Missing };
  Kind kind = Kind::Missing;
  double number = 0.0;
  std::string text;

  static Cell num(double v) { return {Kind::Number, v, {}}; }
  static Cell str(std::string s) { return {Kind::Text, 0.0, std::move(s)}; }
  static Cell none() { return {}; }
  bool is_missing() const { return kind == Kind::Missing; }
};

// Column-major tabular data as ingested, before any preprocessing.
struct RawTable {
  std::vector<std::string> column_names;
  std::vector<std::vector<Cell>> columns;
  std::optional<std::size_t> label_column;

  std::size_t rows() const { return columns.empty() ? 0 : columns[0].size(); }
  std::size_t cols() const { return columns.size(); }
};

// Dense numeric dataset: the currency between pipeline stages.
struct Dataset {
  Matrix x;
  std::vector<std::uint32_t> y;
  std::vector<std::string> feature_names;
  std::vector<std::string> class_names;
};

// Sorted category -> code table. Codes follow lexicographic (byte) order of
// the distinct values; an unseen apply-time value maps to values.size().
struct CategoryTable {
  std::vector<std::string> values;

  std::optional<std::size_t> code(const std::string& v) const;
};

struct Encodings {
  // One entry per table column (label included); empty optional means the
  // column was already numeric.
  std::vector<std::optional<CategoryTable>> tables;
};

struct StandardizeStats {
  std::vector<double> mean;
  std::vector<double> stdev;  // zero-variance features stored as 1
};

// Everything fitted on the training table that apply-time reuses.
struct PreprocessModel {
  std::vector<std::string> feature_columns;  // original names, label excluded
  std::string label_column;
  std::vector<std::optional<CategoryTable>> encodings;  // per feature column
  CategoryTable label_table;                            // class names
  std::vector<double> medians;                          // per feature column
  std::vector<double> feature_min;                      // chi2 scaling stats
  std::vector<double> feature_max;
  std::vector<std::size_t> selected;  // strictly increasing, size k
  StandardizeStats stats;             // per selected feature
  std::size_t k = 0;
};

struct FoldPlan {
  std::vector<std::uint32_t> fold_of;  // per sample, in [0, folds)
  std::uint32_t folds = 0;
  std::uint64_t seed = 0;
};

struct SyntheticSpec {
  std::uint32_t classes = 2;
  std::vector<std::uint32_t> counts;  // per class
  std::uint32_t informative = 1;
  std::uint32_t noise = 0;
  std::uint32_t categorical = 0;
  double missing_rate = 0.0;
  double separation = 1.0;
  std::uint64_t seed = 0;
};

// --- ingestion -------------------------------------------------------------

// Comma-delimited text with a header row. Cells matching a missing marker
// become missing; everything else is parsed as a number when the full cell
// parses, else kept as text. A provided label column must exist.
RawTable load_table(const std::filesystem::path& path,
                    const std::optional<std::string>& label_column,
                    const std::set<std::string>& missing_markers = {"", "NaN", "nan"});

void write_table_csv(const RawTable& table, const std::filesystem::path& path);

// --- preprocessing steps ---------------------------------------------------

// Replaces every text column (label included) by 0-based integer codes in
// lexicographic order of the distinct values. Mixed columns are treated as
// categorical; numeric cells contribute their shortest round-trip decimal.
std::pair<RawTable, Encodings> encode_labels_and_categoricals(const RawTable& t);

// Apply-time encoding with fitted tables. Unseen categories map to the
// reserved index (table size) and are tallied into the returned count.
std::pair<RawTable, std::size_t> apply_encodings(const RawTable& t, const Encodings& enc);

// Replaces missing cells by the column median of non-missing values
// (even-count median = mean of the two middle values). Label column excluded.
std::pair<RawTable, std::vector<double>> impute_median(const RawTable& t);
RawTable impute_with(const RawTable& t, const std::vector<double>& medians);

// Chi-squared score per feature over nonnegative mass. For feature j with
// per-class observed mass O_c and expectation E_c = total * n_c / N, the
// score is sum_c (O_c - E_c)^2 / E_c; zero-total features score 0.
std::vector<double> chi2_scores(const Matrix& x, const std::vector<std::uint32_t>& y,
                                std::size_t n_classes);

// Indices of the k largest scores, ties to the lower index, sorted ascending.
std::vector<std::size_t> select_top_k(const std::vector<double>& scores, std::size_t k);

// Per-feature (v - mean) / std. With fit=true the stats are computed from x
// (population std; zero-variance features use divisor 1) and written into
// stats; with fit=false the provided stats are applied unchanged.
Matrix standardize(const Matrix& x, bool fit, StandardizeStats& stats);

// Balanced class weights w_c = N / (C * n_c).
std::vector<double> class_weights(const std::vector<std::uint32_t>& y, std::size_t n_classes);

// Stratified fold assignment: within each class a seeded permutation is dealt
// round-robin to folds, so per-fold class counts stay within 1 of proportional.
FoldPlan stratified_folds(const std::vector<std::uint32_t>& y, std::uint32_t folds,
                          std::uint64_t seed);

// --- fitted pipeline -------------------------------------------------------

struct FitResult {
  PreprocessModel model;
  Dataset train;
  std::size_t unseen_categories = 0;  // always 0 on the fitting table
};

// Fits the full preprocessing chain: encode -> impute -> min-max-to-[0,1]
// (chi2 scoring only) -> top-k chi2 selection -> standardize the selected
// raw features. The returned Dataset is produced by apply_preprocess on the
// same table, so re-applying the model reproduces it bit-exactly.
FitResult fit_preprocess(const RawTable& t, std::size_t k);

struct ApplyResult {
  Dataset data;  // y empty when the table has no label column
  std::size_t unseen_categories = 0;
  bool has_labels = false;
};

// Applies fitted statistics only. Columns are matched to the training schema
// by name; missing or extra columns raise a DataError listing them.
ApplyResult apply_preprocess(const PreprocessModel& m, const RawTable& t);

// --- synthetic data --------------------------------------------------------

// Desk-scale stand-in for an external dataset. Class c's mean in the
// informative dims is separation * (row c of a fixed unit-norm simplex code
// matrix); noise dims are N(0,1); categorical columns are class-independent
// draws from a small alphabet; feature cells are blanked at missing_rate.
RawTable make_synthetic(const SyntheticSpec& spec);

// The code matrix used by make_synthetic (exposed for test oracles): C rows
// of unit norm with equal pairwise distances sqrt(2C/(C-1)), truncated and
// renormalized when dims < C-1.
Matrix simplex_codes(std::uint32_t classes, std::uint32_t dims);

}  // namespace malpipe::dataio

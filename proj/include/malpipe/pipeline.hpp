#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "malpipe/analysis.hpp"
#include "malpipe/dataio.hpp"
#include "malpipe/hpo.hpp"
#include "malpipe/lda.hpp"
#include "malpipe/mlp.hpp"
#include "malpipe/svm.hpp"

namespace malpipe::pipeline {

struct TableSource {
  std::filesystem::path path;
  std::string label_column = "Class";
  std::set<std::string> missing_markers = {"", "NaN", "nan"};
};

struct HpoSection {
  bool enabled = false;
  std::uint32_t trials = 20;
  std::uint32_t folds = 10;
  std::uint32_t epochs = 30;  // per-fold epoch cap for the MLP study
  std::size_t startup_trials = 5;
  // Desk-scale overrides for the categorical dimensions; empty keeps the
  // paper-search-space defaults.
  std::vector<std::vector<std::size_t>> hidden_options;
  std::vector<std::size_t> batch_options;
};

struct ExplainSection {
  std::size_t instances = 200;
  std::string mode = "exact";  // exact | sample
  std::size_t permutations = 2000;
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::optional<dataio::SyntheticSpec> synthetic;
  std::optional<TableSource> table;
  std::size_t select_k = 47;
  double test_fraction = 0.2;
  double validation_fraction = 0.1;
  mlp::MlpConfig mlp;
  std::size_t lda_k = 14;
  double lda_epsilon = 0.0;  // <= 0 selects the scale-aware default
  svm::SvmConfig svm;
  HpoSection hpo_mlp;
  HpoSection hpo_svm;
  ExplainSection explain;
  std::string out_dir;  // default output directory; the --out flag wins

  void validate() const;
};

// Parses the JSON config document; unknown keys raise a ConfigError.
PipelineConfig load_config(const std::filesystem::path& path);
PipelineConfig parse_config(const std::string& json_text);
std::string config_to_json(const PipelineConfig& config);

struct ModelBundle {
  dataio::PreprocessModel preprocess;
  mlp::MlpModel mlp;
  lda::LdaModel lda;
  svm::MulticlassSvm svm;
  std::string config_json;

  // Stage widths must chain: preprocess k == MLP input, MLP representation
  // width == LDA input, LDA k == SVM feature width.
  void validate() const;
};

void persist(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle restore(const std::filesystem::path& path);

// Staged work file for the per-stage subcommands: the same container format
// carrying the preprocessed dataset, the held-out split and whichever models
// have been trained so far. train-svm completes it into a ModelBundle.
struct WorkState {
  std::string config_json;
  dataio::PreprocessModel preprocess;
  dataio::Dataset dataset;     // full preprocessed table
  dataio::FoldPlan test_plan;  // fold 0 is the held-out split
  std::optional<mlp::MlpModel> mlp;
  std::optional<Matrix> z_train;  // representation of the training rows
  std::optional<lda::LdaModel> lda;
  std::optional<svm::MulticlassSvm> svm;

  PipelineConfig config() const;  // parsed from config_json
  std::vector<std::size_t> train_rows() const;
  std::vector<std::size_t> test_rows() const;
};

void save_work(const WorkState& state, const std::filesystem::path& path);
WorkState load_work(const std::filesystem::path& path);

struct PipelineResult {
  ModelBundle bundle;
  analysis::EvalReport mlp_report;
  analysis::EvalReport svm_report;
  std::vector<std::filesystem::path> emitted;
};

// Full run: ingest/synthesize -> preprocess fit -> stratified 80/20 split ->
// MLP train (optional HPO) -> extract z -> LDA -> SVM (optional HPO) ->
// evaluate both models on the held-out split -> emit reports, plot data and
// the persisted bundle into out_dir. On error every file written so far is
// removed before the error propagates.
PipelineResult run_pipeline(const PipelineConfig& config,
                            const std::filesystem::path& out_dir);

// Applies a restored bundle to a table: one record per row with the row
// index, predicted class name and per-class margins. Unseen categorical
// values use the reserved code; their count lands in a footer record when
// nonzero.
void classify(const ModelBundle& bundle, const dataio::RawTable& table,
              const std::filesystem::path& out_path);

struct Evaluation {
  analysis::EvalReport mlp_report;
  analysis::EvalReport svm_report;
};

// Evaluates both stages of a bundle against a labeled table.
Evaluation evaluate(const ModelBundle& bundle, const dataio::RawTable& table);

// Model predictions on already-preprocessed features (helper shared by
// run_pipeline / evaluate / classify).
struct StagePredictions {
  Matrix mlp_probs;
  std::vector<std::uint32_t> mlp_labels;
  Matrix lda_features;
  svm::Prediction svm;
};
StagePredictions predict_stages(const ModelBundle& bundle, const Matrix& x);

// Shapley explanations of the SVM margin for the predicted class over the
// LDA features; baseline is the projected training mean.
std::vector<analysis::Explanation> explain_instances(const ModelBundle& bundle,
                                                     const Matrix& lda_features,
                                                     const ExplainSection& section,
                                                     std::uint64_t seed);

// Search spaces mirroring the published tuning table, with optional
// desk-scale overrides for the categorical dimensions.
hpo::SearchSpace mlp_search_space(const HpoSection& section);
hpo::SearchSpace svm_search_space();

dataio::Dataset subset_rows(const dataio::Dataset& ds, const std::vector<std::size_t>& idx);

// Stage helpers shared by run_pipeline and the per-stage subcommands. Both
// honor the config's HPO toggles, writing study_<stage>.csv into out_dir and
// appending every emitted path to `emitted` when it is non-null.
mlp::MlpModel train_mlp_stage(const PipelineConfig& config, const dataio::Dataset& train_set,
                              const std::filesystem::path& out_dir,
                              std::vector<std::filesystem::path>* emitted);
svm::MulticlassSvm train_svm_stage(const PipelineConfig& config, const Matrix& lda_train,
                                   const std::vector<std::uint32_t>& y,
                                   const std::vector<std::string>& class_names,
                                   const std::filesystem::path& out_dir,
                                   std::vector<std::filesystem::path>* emitted);

// Study objectives used by `hpo` and by in-pipeline tuning. The MLP
// objective trains all folds epoch-by-epoch and reports the mean validation
// accuracy per epoch; its final value is the best mean over epochs. The SVM
// objective works on fixed LDA features, reports per-fold accuracy and
// returns the fold mean. Fold plans are derived from the study seed so all
// trials compare on identical folds.
hpo::Objective mlp_objective(dataio::Dataset train, mlp::MlpConfig base,
                             std::uint32_t epoch_cap);
hpo::Objective svm_objective(Matrix lda_features, std::vector<std::uint32_t> y,
                             std::vector<std::string> class_names, svm::SvmConfig base);

}  // namespace malpipe::pipeline

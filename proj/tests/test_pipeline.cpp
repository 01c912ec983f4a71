#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "malpipe/pipeline.hpp"

using namespace malpipe;
namespace fs = std::filesystem;

namespace {

std::string small_config_json(std::uint64_t seed) {
  std::ostringstream ss;
  ss << R"({
    "seed": )"
     << seed << R"(,
    "data": {
      "synthetic": {
        "classes": 3,
        "counts": [60, 50, 40],
        "informative": 2,
        "noise": 3,
        "categorical": 1,
        "missing_rate": 0.02,
        "separation": 4.0
      }
    },
    "preprocess": {"k": 4},
    "split": {"test_fraction": 0.25, "validation_fraction": 0.2},
    "mlp": {"hidden": [12, 12], "activation": "relu", "lr_max": 0.05, "lr_min": 0.0001,
            "batch": 16, "max_epochs": 12, "patience": 6, "dropout": [0.0, 0.0]},
    "lda": {"k": 2},
    "svm": {"c": 5.0, "kernel": "rbf", "gamma": "scale", "balanced": true},
    "explain": {"instances": 6, "mode": "exact"}
  })";
  return ss.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("config parsing validates the data source and seed") {
  CHECK_THROWS_AS(pipeline::parse_config(R"({"seed": 1, "data": {}})"), ConfigError);
  CHECK_THROWS_AS(
      pipeline::parse_config(R"({"data": {"synthetic": {"classes": 2}}})"),
      ConfigError);
  CHECK_THROWS_AS(pipeline::parse_config(R"({"seed": 1, "typo": 2,
      "data": {"synthetic": {"classes": 2}}})"),
                  ConfigError);
  // Both sources at once is as invalid as none.
  CHECK_THROWS_AS(pipeline::parse_config(R"({"seed": 1, "data": {
      "synthetic": {"classes": 2}, "table": {"path": "x.csv"}}})"),
                  ConfigError);
  CHECK_NOTHROW(pipeline::parse_config(small_config_json(1)));
}

TEST_CASE("pipeline end to end: reports, bundle, byte-determinism") {
  const auto cfg = pipeline::parse_config(small_config_json(42));
  const auto dir_a = fresh_dir("malpipe_run_a");
  const auto dir_b = fresh_dir("malpipe_run_b");

  const auto result = pipeline::run_pipeline(cfg, dir_a);
  CHECK(result.svm_report.accuracy >= 0.8);
  for (const char* name :
       {"table.csv", "bundle.malpipe", "train_mlp.csv", "metrics_mlp.csv",
        "summary_mlp.csv", "confusion_mlp.csv", "pr_mlp.csv", "metrics_svm.csv",
        "summary_svm.csv", "confusion_svm.csv", "pr_svm.csv", "beeswarm_svm.csv",
        "waterfall_svm.csv", "importance_svm.csv"})
    CHECK(fs::exists(dir_a / name));

  const auto again = pipeline::run_pipeline(cfg, dir_b);
  CHECK(again.svm_report.accuracy == result.svm_report.accuracy);
  for (const auto& path : result.emitted) {
    const auto twin = dir_b / path.filename();
    CHECK(slurp(path) == slurp(twin));
  }

  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("persist, restore and re-persist are bit-stable") {
  const auto cfg = pipeline::parse_config(small_config_json(7));
  const auto dir = fresh_dir("malpipe_persist");
  const auto result = pipeline::run_pipeline(cfg, dir);

  const auto bundle_path = dir / "bundle.malpipe";
  const std::string first = slurp(bundle_path);

  const auto restored = pipeline::restore(bundle_path);
  const auto repersisted = dir / "bundle2.malpipe";
  pipeline::persist(restored, repersisted);
  CHECK(slurp(repersisted) == first);

  // Same bundle written twice yields identical bytes.
  const auto third = dir / "bundle3.malpipe";
  pipeline::persist(restored, third);
  CHECK(slurp(third) == first);

  // Predictions before and after the round trip agree bit for bit.
  const auto table = dataio::load_table(dir / "table.csv", std::string("Class"));
  const auto applied = dataio::apply_preprocess(result.bundle.preprocess, table);
  const auto before = pipeline::predict_stages(result.bundle, applied.data.x);
  const auto after = pipeline::predict_stages(restored, applied.data.x);
  CHECK(before.svm.labels == after.svm.labels);
  CHECK(before.svm.scores.data == after.svm.scores.data);
  CHECK(before.mlp_probs.data == after.mlp_probs.data);

  fs::remove_all(dir);
}

TEST_CASE("restore rejects bad magic, truncation and corruption") {
  const auto cfg = pipeline::parse_config(small_config_json(9));
  const auto dir = fresh_dir("malpipe_corrupt");
  pipeline::run_pipeline(cfg, dir);
  const auto bundle_path = dir / "bundle.malpipe";
  const std::string good = slurp(bundle_path);

  {
    auto bad = good;
    for (int i = 0; i < 8; ++i) bad[i] = 'X';
    std::ofstream out(dir / "bad_magic.malpipe", std::ios::binary);
    out << bad;
    out.close();
    CHECK_THROWS_WITH_AS(pipeline::restore(dir / "bad_magic.malpipe"),
                         doctest::Contains("magic"), FormatError);
  }
  {
    std::ofstream out(dir / "truncated.malpipe", std::ios::binary);
    out << good.substr(0, good.size() / 2);
    out.close();
    CHECK_THROWS_AS(pipeline::restore(dir / "truncated.malpipe"), FormatError);
  }
  {
    auto bad = good;
    bad[9] = 9;  // unsupported format version
    std::ofstream out(dir / "future.malpipe", std::ios::binary);
    out << bad;
    out.close();
    CHECK_THROWS_WITH_AS(pipeline::restore(dir / "future.malpipe"),
                         doctest::Contains("version"), FormatError);
  }

  fs::remove_all(dir);
}

TEST_CASE("classify matches the manually composed stages and tallies unseen values") {
  const auto cfg = pipeline::parse_config(small_config_json(11));
  const auto dir = fresh_dir("malpipe_classify");
  const auto result = pipeline::run_pipeline(cfg, dir);

  const auto table = dataio::load_table(dir / "table.csv", std::string("Class"));
  const auto out_path = dir / "labels.csv";
  pipeline::classify(result.bundle, table, out_path);

  // Manual composition: preprocess -> extract -> transform -> predict.
  const auto applied = dataio::apply_preprocess(result.bundle.preprocess, table);
  const Matrix z = mlp::extract_representation(result.bundle.mlp, applied.data.x);
  const Matrix t = lda::transform(result.bundle.lda, z);
  const auto pred = svm::predict(result.bundle.svm, t);

  std::ifstream in(out_path);
  std::string header;
  std::getline(in, header);
  CHECK(header.rfind("row,predicted_class", 0) == 0);
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    std::string line;
    REQUIRE(std::getline(in, line));
    const auto first_comma = line.find(',');
    const auto second_comma = line.find(',', first_comma + 1);
    CHECK(line.substr(0, first_comma) == std::to_string(i));
    CHECK(line.substr(first_comma + 1, second_comma - first_comma - 1) ==
          result.bundle.svm.class_names[pred.labels[i]]);
  }

  // An unseen categorical value flows through the reserved code and lands in
  // the footer tally.
  dataio::RawTable tweaked = table;
  for (std::size_t c = 0; c < tweaked.cols(); ++c) {
    if (tweaked.column_names[c] == "cat0") {
      tweaked.columns[c][0] = dataio::Cell::str("never-seen");
      break;
    }
  }
  pipeline::classify(result.bundle, tweaked, out_path);
  const std::string body = slurp(out_path);
  CHECK(body.find("#unseen_categories,1") != std::string::npos);

  // Empty table: header-only output.
  dataio::RawTable empty = table;
  for (auto& col : empty.columns) col.clear();
  pipeline::classify(result.bundle, empty, out_path);
  const std::string empty_body = slurp(out_path);
  CHECK(std::count(empty_body.begin(), empty_body.end(), '\n') == 1);

  fs::remove_all(dir);
}

TEST_CASE("evaluate requires labels and scores the bundle") {
  const auto cfg = pipeline::parse_config(small_config_json(13));
  const auto dir = fresh_dir("malpipe_evaluate");
  const auto result = pipeline::run_pipeline(cfg, dir);

  const auto table = dataio::load_table(dir / "table.csv", std::string("Class"));
  const auto eval = pipeline::evaluate(result.bundle, table);
  CHECK(eval.svm_report.accuracy >= 0.8);
  CHECK(eval.mlp_report.class_names.size() == 3);

  dataio::RawTable unlabeled = table;
  unlabeled.column_names[*table.label_column] = "NotTheLabel";
  CHECK_THROWS_AS(pipeline::evaluate(result.bundle, unlabeled), DataError);

  fs::remove_all(dir);
}

TEST_CASE("failed runs leave no partial outputs") {
  auto cfg = pipeline::parse_config(small_config_json(15));
  cfg.lda_k = 10;  // > C-1 = 2: the LDA stage must fail after files exist
  const auto dir = fresh_dir("malpipe_partial");
  CHECK_THROWS_AS(pipeline::run_pipeline(cfg, dir), ConfigError);
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    (void)entry;
    ++files;
  }
  CHECK(files == 0);
  fs::remove_all(dir);
}

TEST_CASE("work-file staging mirrors the monolithic pipeline") {
  const auto cfg = pipeline::parse_config(small_config_json(17));
  const auto dir = fresh_dir("malpipe_staged");

  // Stage by stage.
  const auto table = [&] {
    dataio::SyntheticSpec spec = *cfg.synthetic;
    spec.seed = cfg.seed;
    return dataio::make_synthetic(spec);
  }();
  auto fitted = dataio::fit_preprocess(table, cfg.select_k);
  pipeline::WorkState state;
  state.config_json = pipeline::config_to_json(cfg);
  state.preprocess = fitted.model;
  state.dataset = fitted.train;
  state.test_plan = dataio::stratified_folds(fitted.train.y, 4, derive_seed(cfg.seed, 1));
  const auto work = dir / "pipeline.work";
  pipeline::save_work(state, work);

  auto loaded = pipeline::load_work(work);
  const auto train_set = pipeline::subset_rows(loaded.dataset, loaded.train_rows());
  loaded.mlp = pipeline::train_mlp_stage(cfg, train_set, dir, nullptr);
  loaded.z_train = mlp::extract_representation(*loaded.mlp, train_set.x);
  loaded.lda = lda::fit(*loaded.z_train, train_set.y, 3, cfg.lda_k, cfg.lda_epsilon);
  const Matrix t_train = lda::transform(*loaded.lda, *loaded.z_train);
  loaded.svm = pipeline::train_svm_stage(cfg, t_train, train_set.y,
                                         loaded.dataset.class_names, dir, nullptr);
  pipeline::save_work(loaded, work);

  pipeline::ModelBundle bundle{loaded.preprocess, *loaded.mlp, *loaded.lda, *loaded.svm,
                               loaded.config_json};
  pipeline::persist(bundle, dir / "bundle.malpipe");

  // The monolithic run with the same seed produces the identical bundle.
  const auto dir_mono = fresh_dir("malpipe_staged_mono");
  pipeline::run_pipeline(cfg, dir_mono);
  CHECK(slurp(dir / "bundle.malpipe") == slurp(dir_mono / "bundle.malpipe"));

  fs::remove_all(dir);
  fs::remove_all(dir_mono);
}

TEST_CASE("in-pipeline hpo selects parameters and stays deterministic") {
  auto cfg = pipeline::parse_config(small_config_json(19));
  cfg.hpo_svm.enabled = true;
  cfg.hpo_svm.trials = 4;
  cfg.hpo_svm.folds = 3;
  cfg.hpo_svm.startup_trials = 2;

  const auto dir_a = fresh_dir("malpipe_hpo_a");
  const auto dir_b = fresh_dir("malpipe_hpo_b");
  const auto a = pipeline::run_pipeline(cfg, dir_a);
  const auto b = pipeline::run_pipeline(cfg, dir_b);
  CHECK(fs::exists(dir_a / "study_svm.csv"));
  CHECK(slurp(dir_a / "study_svm.csv") == slurp(dir_b / "study_svm.csv"));
  CHECK(a.svm_report.accuracy == b.svm_report.accuracy);

  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("width-chain validation refuses inconsistent bundles") {
  const auto cfg = pipeline::parse_config(small_config_json(23));
  const auto dir = fresh_dir("malpipe_chain");
  auto result = pipeline::run_pipeline(cfg, dir);

  auto broken = result.bundle;
  broken.lda.w = Matrix(5, 2);  // MLP representation width no longer matches
  CHECK_THROWS_AS(pipeline::persist(broken, dir / "broken.malpipe"), FormatError);

  fs::remove_all(dir);
}

// Command-line face of the malware-classification pipeline: orchestrates
// synthesis, preprocessing, the MLP/LDA/SVM stages, hyperparameter studies,
// evaluation and Shapley explanation exports.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "malpipe/pipeline.hpp"
#include "malpipe/text.hpp"

namespace fs = std::filesystem;
using namespace malpipe;

namespace {

pipeline::PipelineConfig load_config_with_seed(const std::string& path,
                                               const std::optional<std::uint64_t>& seed) {
  auto cfg = pipeline::load_config(path);
  if (seed) {
    cfg.seed = *seed;
    if (cfg.synthetic) cfg.synthetic->seed = *seed;
  }
  return cfg;
}

dataio::RawTable ingest(const pipeline::PipelineConfig& cfg) {
  if (cfg.synthetic) {
    dataio::SyntheticSpec spec = *cfg.synthetic;
    spec.seed = cfg.seed;
    return dataio::make_synthetic(spec);
  }
  return dataio::load_table(cfg.table->path, cfg.table->label_column,
                            cfg.table->missing_markers);
}

fs::path work_path(const fs::path& out) { return out / "pipeline.work"; }

pipeline::WorkState require_work(const fs::path& out,
                                 std::initializer_list<const char*> needed) {
  auto state = pipeline::load_work(work_path(out));
  for (const char* stage : needed) {
    const bool have = std::string(stage) == "mlp"   ? state.mlp.has_value()
                      : std::string(stage) == "z"   ? state.z_train.has_value()
                      : std::string(stage) == "lda" ? state.lda.has_value()
                                                    : state.svm.has_value();
    if (!have)
      throw DataError(std::string("work file is missing the '") + stage +
                      "' stage; run the earlier subcommands first");
  }
  return state;
}

int dispatch(CLI::App& app, int argc, char** argv) {
  std::string config_path, table_path, bundle_path, out_dir, out_file, target = "both";
  std::optional<std::uint64_t> seed;

  const auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "pipeline config (JSON)")->required();
    cmd->add_option("--seed", seed, "override the config seed");
  };
  const auto add_out = [&](CLI::App* cmd) {
    cmd->add_option("--out", out_dir, "output directory (default: config 'out' or '.')");
  };
  // --out wins; a config 'out' entry is the fallback for config-driven runs.
  const auto resolve_out = [&](const pipeline::PipelineConfig* cfg) -> std::string {
    if (!out_dir.empty()) return out_dir;
    if (cfg && !cfg->out_dir.empty()) return cfg->out_dir;
    return ".";
  };

  auto* synth = app.add_subcommand("synth", "generate the synthetic table");
  add_config(synth);
  add_out(synth);

  auto* preprocess = app.add_subcommand("preprocess", "fit preprocessing and split");
  add_config(preprocess);
  add_out(preprocess);

  auto* train_mlp = app.add_subcommand("train-mlp", "train the attention MLP");
  add_out(train_mlp);
  auto* extract = app.add_subcommand("extract", "extract attention representations");
  add_out(extract);
  auto* train_lda = app.add_subcommand("train-lda", "fit the LDA projection");
  add_out(train_lda);
  auto* train_svm = app.add_subcommand("train-svm", "train the margin classifier");
  add_out(train_svm);

  auto* hpo_cmd = app.add_subcommand("hpo", "run hyperparameter studies");
  add_out(hpo_cmd);
  hpo_cmd->add_option("--target", target, "mlp, svm or both");

  auto* pipeline_cmd = app.add_subcommand("pipeline", "run the whole pipeline");
  add_config(pipeline_cmd);
  add_out(pipeline_cmd);

  auto* classify = app.add_subcommand("classify", "classify a table with a bundle");
  classify->add_option("--bundle", bundle_path, "model bundle")->required();
  classify->add_option("--table", table_path, "input table (CSV)")->required();
  classify->add_option("--out", out_file, "output CSV")->required();

  auto* evaluate = app.add_subcommand("evaluate", "evaluate a bundle on a labeled table");
  evaluate->add_option("--bundle", bundle_path, "model bundle")->required();
  evaluate->add_option("--table", table_path, "labeled table (CSV)")->required();
  add_out(evaluate);

  auto* explain = app.add_subcommand("explain", "Shapley explanations for a table");
  explain->add_option("--bundle", bundle_path, "model bundle")->required();
  explain->add_option("--table", table_path, "input table (CSV)")->required();
  add_out(explain);
  std::size_t explain_instances = 0;
  explain->add_option("--instances", explain_instances, "cap on explained rows (0 = config)");

  app.require_subcommand(1);
  CLI11_PARSE(app, argc, argv);  // returns early on parse errors

  if (synth->parsed()) {
    const auto cfg = load_config_with_seed(config_path, seed);
    if (!cfg.synthetic) throw ConfigError("synth needs a synthetic data source in the config");
    const fs::path out(resolve_out(&cfg));
    fs::create_directories(out);
    dataio::write_table_csv(ingest(cfg), out / "table.csv");
    std::cout << "wrote " << (out / "table.csv").string() << "\n";
  } else if (preprocess->parsed()) {
    const auto cfg = load_config_with_seed(config_path, seed);
    const fs::path out(resolve_out(&cfg));
    fs::create_directories(out);
    const auto table = ingest(cfg);
    if (cfg.synthetic) dataio::write_table_csv(table, out / "table.csv");
    auto fitted = dataio::fit_preprocess(table, cfg.select_k);
    pipeline::WorkState state;
    state.config_json = pipeline::config_to_json(cfg);
    state.preprocess = std::move(fitted.model);
    state.dataset = std::move(fitted.train);
    const std::uint32_t folds =
        static_cast<std::uint32_t>(std::llround(1.0 / cfg.test_fraction));
    state.test_plan = dataio::stratified_folds(state.dataset.y, folds,
                                               derive_seed(cfg.seed, 1));
    pipeline::save_work(state, work_path(out));
    std::cout << "wrote " << work_path(out).string() << "\n";
  } else if (train_mlp->parsed()) {
    const fs::path out(resolve_out(nullptr));
    auto state = pipeline::load_work(work_path(out));
    const auto cfg = state.config();
    const auto train_set = pipeline::subset_rows(state.dataset, state.train_rows());
    state.mlp = pipeline::train_mlp_stage(cfg, train_set, out, nullptr);
    pipeline::save_work(state, work_path(out));
    std::cout << "trained MLP: best epoch " << state.mlp->report.best_epoch << " of "
              << state.mlp->report.epochs.size() << "\n";
  } else if (extract->parsed()) {
    const fs::path out(resolve_out(nullptr));
    auto state = require_work(out, {"mlp"});
    const auto train_set = pipeline::subset_rows(state.dataset, state.train_rows());
    state.z_train = mlp::extract_representation(*state.mlp, train_set.x);
    pipeline::save_work(state, work_path(out));
    std::cout << "extracted " << state.z_train->rows << "x" << state.z_train->cols
              << " representation\n";
  } else if (train_lda->parsed()) {
    const fs::path out(resolve_out(nullptr));
    auto state = require_work(out, {"mlp", "z"});
    const auto cfg = state.config();
    const auto train_set = pipeline::subset_rows(state.dataset, state.train_rows());
    state.lda = lda::fit(*state.z_train, train_set.y, state.dataset.class_names.size(),
                         cfg.lda_k, cfg.lda_epsilon);
    pipeline::save_work(state, work_path(out));
    std::cout << "fit LDA: " << state.lda->w.rows << " -> " << state.lda->k
              << " components\n";
  } else if (train_svm->parsed()) {
    const fs::path out(resolve_out(nullptr));
    auto state = require_work(out, {"mlp", "z", "lda"});
    const auto cfg = state.config();
    const auto train_set = pipeline::subset_rows(state.dataset, state.train_rows());
    const Matrix t_train = lda::transform(*state.lda, *state.z_train);
    state.svm = pipeline::train_svm_stage(cfg, t_train, train_set.y,
                                          state.dataset.class_names, out, nullptr);
    pipeline::save_work(state, work_path(out));
    pipeline::ModelBundle bundle{state.preprocess, *state.mlp, *state.lda, *state.svm,
                                 state.config_json};
    pipeline::persist(bundle, out / "bundle.malpipe");
    std::cout << "wrote " << (out / "bundle.malpipe").string() << "\n";
  } else if (hpo_cmd->parsed()) {
    const fs::path out(resolve_out(nullptr));
    auto state = pipeline::load_work(work_path(out));
    const auto cfg = state.config();
    const auto train_set = pipeline::subset_rows(state.dataset, state.train_rows());
    if (target != "mlp" && target != "svm" && target != "both")
      throw ConfigError("hpo target must be mlp, svm or both");
    if (target == "mlp" || target == "both") {
      mlp::MlpConfig base = cfg.mlp;
      base.seed = derive_seed(cfg.seed, 3);
      const auto study = hpo::run_study(
          pipeline::mlp_objective(train_set, base, cfg.hpo_mlp.epochs),
          pipeline::mlp_search_space(cfg.hpo_mlp), cfg.hpo_mlp.trials, cfg.hpo_mlp.folds,
          derive_seed(cfg.seed, 5), {cfg.hpo_mlp.startup_trials, true});
      std::ofstream study_out(out / "study_mlp.csv", std::ios::binary);
      hpo::export_study(study, study_out);
      std::cout << "study_mlp.csv: best trial "
                << (study.best ? std::to_string(*study.best) : "none") << "\n";
    }
    if (target == "svm" || target == "both") {
      auto ready = require_work(out, {"mlp", "z", "lda"});
      svm::SvmConfig base = cfg.svm;
      base.seed = derive_seed(cfg.seed, 4);
      const Matrix t_train = lda::transform(*ready.lda, *ready.z_train);
      const auto study = hpo::run_study(
          pipeline::svm_objective(t_train, train_set.y, state.dataset.class_names, base),
          pipeline::svm_search_space(), cfg.hpo_svm.trials, cfg.hpo_svm.folds,
          derive_seed(cfg.seed, 6), {cfg.hpo_svm.startup_trials, true});
      std::ofstream study_out(out / "study_svm.csv", std::ios::binary);
      hpo::export_study(study, study_out);
      std::cout << "study_svm.csv: best trial "
                << (study.best ? std::to_string(*study.best) : "none") << "\n";
    }
  } else if (pipeline_cmd->parsed()) {
    const auto cfg = load_config_with_seed(config_path, seed);
    const auto result = pipeline::run_pipeline(cfg, resolve_out(&cfg));
    std::cout << "pipeline complete: MLP accuracy "
              << format_double(result.mlp_report.accuracy) << ", SVM accuracy "
              << format_double(result.svm_report.accuracy) << "\n";
    for (const auto& p : result.emitted) std::cout << "  " << p.string() << "\n";
  } else if (classify->parsed()) {
    const auto bundle = pipeline::restore(bundle_path);
    const auto table = dataio::load_table(table_path, std::nullopt);
    pipeline::classify(bundle, table, out_file);
    std::cout << "wrote " << out_file << "\n";
  } else if (evaluate->parsed()) {
    const auto bundle = pipeline::restore(bundle_path);
    const auto table =
        dataio::load_table(table_path, bundle.preprocess.label_column);
    const auto eval = pipeline::evaluate(bundle, table);
    const fs::path dir(resolve_out(nullptr));
    fs::create_directories(dir);
    analysis::export_metrics(eval.mlp_report, dir / "metrics_mlp.csv");
    analysis::export_summary(eval.mlp_report, dir / "summary_mlp.csv");
    analysis::export_metrics(eval.svm_report, dir / "metrics_svm.csv");
    analysis::export_summary(eval.svm_report, dir / "summary_svm.csv");
    std::cout << "MLP accuracy " << format_double(eval.mlp_report.accuracy)
              << ", SVM accuracy " << format_double(eval.svm_report.accuracy) << "\n";
  } else if (explain->parsed()) {
    const auto bundle = pipeline::restore(bundle_path);
    const auto table = dataio::load_table(table_path, std::nullopt);
    const auto applied = dataio::apply_preprocess(bundle.preprocess, table);
    const auto stages = pipeline::predict_stages(bundle, applied.data.x);
    auto cfg = pipeline::parse_config(bundle.config_json);
    if (explain_instances > 0) cfg.explain.instances = explain_instances;
    Rng rng(derive_seed(cfg.seed, 7));
    auto order = rng.permutation(stages.lda_features.rows);
    order.resize(std::min(cfg.explain.instances, order.size()));
    std::sort(order.begin(), order.end());
    Matrix subset(order.size(), stages.lda_features.cols);
    for (std::size_t i = 0; i < order.size(); ++i) {
      const auto src = stages.lda_features.row(order[i]);
      std::copy(src.begin(), src.end(), subset.row(i).begin());
    }
    const auto explanations =
        pipeline::explain_instances(bundle, subset, cfg.explain, derive_seed(cfg.seed, 8));
    std::vector<std::string> names;
    for (std::size_t j = 0; j < bundle.lda.k; ++j) names.push_back("lda_" + std::to_string(j));
    const fs::path dir(resolve_out(nullptr));
    fs::create_directories(dir);
    analysis::export_beeswarm(explanations, names, dir / "beeswarm_svm.csv");
    if (!explanations.empty())
      analysis::export_waterfall(explanations[0], names, dir / "waterfall_svm.csv");
    analysis::export_bar(analysis::global_importance(explanations), names,
                         dir / "importance_svm.csv");
    std::cout << "explained " << explanations.size() << " instances\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attention-MLP / LDA / SVM malware classification pipeline"};
  try {
    return dispatch(app, argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 5;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 5;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

#include "malpipe/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "malpipe/text.hpp"

namespace malpipe::pipeline {

using nlohmann::json;

namespace {

void reject_unknown_keys(const json& obj, const char* where,
                         std::initializer_list<const char*> known) {
  for (const auto& [key, value] : obj.items()) {
    if (std::find_if(known.begin(), known.end(),
                     [&](const char* k) { return key == k; }) == known.end())
      throw ConfigError(std::string("unknown config key '") + key + "' in " + where);
  }
}

std::uint32_t fraction_to_folds(double fraction, const char* what) {
  if (!(fraction > 0.0 && fraction <= 0.5))
    throw ConfigError(std::string(what) + " must lie in (0, 0.5]");
  return static_cast<std::uint32_t>(std::llround(1.0 / fraction));
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_fold(
    const dataio::FoldPlan& plan, std::uint32_t fold) {
  std::vector<std::size_t> in_fold, out_fold;
  for (std::size_t i = 0; i < plan.fold_of.size(); ++i)
    (plan.fold_of[i] == fold ? in_fold : out_fold).push_back(i);
  return {std::move(in_fold), std::move(out_fold)};
}

std::vector<std::uint32_t> argmax_rows(const Matrix& scores) {
  std::vector<std::uint32_t> labels(scores.rows);
  for (std::size_t i = 0; i < scores.rows; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < scores.cols; ++j)
      if (scores(i, j) > scores(i, best)) best = j;
    labels[i] = static_cast<std::uint32_t>(best);
  }
  return labels;
}

analysis::EvalReport build_report(const std::vector<std::uint32_t>& y_true,
                                  const std::vector<std::uint32_t>& y_pred,
                                  const Matrix& scores,
                                  const std::vector<std::string>& class_names) {
  auto report = analysis::metrics(analysis::confusion(y_true, y_pred, class_names));
  report.pr.resize(class_names.size());
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    std::vector<double> class_scores(y_true.size());
    std::vector<bool> truth(y_true.size());
    std::size_t positives = 0;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
      class_scores[i] = scores(i, c);
      truth[i] = y_true[i] == c;
      positives += truth[i] ? 1 : 0;
    }
    if (positives > 0) report.pr[c] = analysis::pr_curve(class_scores, truth);
  }
  return report;
}

mlp::MlpConfig mlp_config_from_params(const mlp::MlpConfig& base, const hpo::ParamSet& params) {
  mlp::MlpConfig cfg = base;
  {
    const std::string& hidden = hpo::as_text(params, "hidden");
    const auto comma = hidden.find(',');
    if (comma == std::string::npos)
      throw ConfigError("hidden option '" + hidden + "' must be 'a,b'");
    cfg.hidden = {std::stoul(hidden.substr(0, comma)), std::stoul(hidden.substr(comma + 1))};
  }
  cfg.activation = activation_from_string(hpo::as_text(params, "activation"));
  cfg.l1_alpha = hpo::as_number(params, "l1");
  cfg.l2_alpha = hpo::as_number(params, "l2");
  cfg.dropout = {hpo::as_number(params, "dropout1"), hpo::as_number(params, "dropout2")};
  cfg.lr_max = hpo::as_number(params, "lr");
  cfg.lr_min = std::min(base.lr_min, cfg.lr_max);
  cfg.batch_size = std::stoul(hpo::as_text(params, "batch"));
  return cfg;
}

svm::SvmConfig svm_config_from_params(const svm::SvmConfig& base, const hpo::ParamSet& params) {
  svm::SvmConfig cfg = base;
  cfg.kernel.kind = svm::kernel_from_string(hpo::as_text(params, "kernel"));
  cfg.c = hpo::as_number(params, "c");
  const std::string& gamma = hpo::as_text(params, "gamma");
  cfg.kernel.gamma_mode =
      gamma == "scale" ? svm::GammaMode::Scale : svm::GammaMode::Auto;
  return cfg;
}

std::vector<std::string> lda_feature_names(std::size_t k) {
  std::vector<std::string> names;
  names.reserve(k);
  for (std::size_t j = 0; j < k; ++j) names.push_back("lda_" + std::to_string(j));
  return names;
}

}  // namespace

void PipelineConfig::validate() const {
  if (synthetic.has_value() == table.has_value())
    throw ConfigError("config must name exactly one data source (synthetic or table)");
  fraction_to_folds(test_fraction, "test_fraction");
  fraction_to_folds(validation_fraction, "validation_fraction");
  if (select_k < 1) throw ConfigError("preprocess k must be at least 1");
  if (lda_k < 1) throw ConfigError("lda k must be at least 1");
  mlp.validate();
  svm.kernel.validate();
  if (explain.mode != "exact" && explain.mode != "sample")
    throw ConfigError("explain mode must be 'exact' or 'sample'");
}

PipelineConfig parse_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }

  reject_unknown_keys(doc, "the config root",
                      {"seed", "data", "preprocess", "split", "mlp", "lda", "svm", "hpo",
                       "explain", "out"});
  PipelineConfig cfg;
  if (!doc.contains("seed")) throw ConfigError("config is missing the mandatory 'seed'");
  cfg.seed = doc["seed"].get<std::uint64_t>();

  if (!doc.contains("data")) throw ConfigError("config is missing the 'data' section");
  const json& data = doc["data"];
  reject_unknown_keys(data, "data", {"synthetic", "table"});
  if (data.contains("synthetic")) {
    const json& s = data["synthetic"];
    reject_unknown_keys(s, "data.synthetic",
                        {"classes", "counts", "informative", "noise", "categorical",
                         "missing_rate", "separation"});
    dataio::SyntheticSpec spec;
    spec.classes = s.value("classes", 2u);
    if (s.contains("counts")) spec.counts = s["counts"].get<std::vector<std::uint32_t>>();
    else spec.counts.assign(spec.classes, 100);
    spec.informative = s.value("informative", 1u);
    spec.noise = s.value("noise", 0u);
    spec.categorical = s.value("categorical", 0u);
    spec.missing_rate = s.value("missing_rate", 0.0);
    spec.separation = s.value("separation", 1.0);
    spec.seed = cfg.seed;
    cfg.synthetic = spec;
  }
  if (data.contains("table")) {
    const json& t = data["table"];
    reject_unknown_keys(t, "data.table", {"path", "label_column", "missing_markers"});
    TableSource src;
    if (!t.contains("path")) throw ConfigError("data.table needs a 'path'");
    src.path = t["path"].get<std::string>();
    src.label_column = t.value("label_column", std::string("Class"));
    if (t.contains("missing_markers")) {
      src.missing_markers.clear();
      for (const auto& m : t["missing_markers"]) src.missing_markers.insert(m.get<std::string>());
    }
    cfg.table = src;
  }

  if (doc.contains("preprocess")) {
    const json& p = doc["preprocess"];
    reject_unknown_keys(p, "preprocess", {"k"});
    cfg.select_k = p.value("k", cfg.select_k);
  }
  if (doc.contains("split")) {
    const json& s = doc["split"];
    reject_unknown_keys(s, "split", {"test_fraction", "validation_fraction"});
    cfg.test_fraction = s.value("test_fraction", cfg.test_fraction);
    cfg.validation_fraction = s.value("validation_fraction", cfg.validation_fraction);
  }
  if (doc.contains("mlp")) {
    const json& m = doc["mlp"];
    reject_unknown_keys(m, "mlp",
                        {"hidden", "activation", "l1", "l2", "dropout", "lr_max", "lr_min",
                         "t0", "t_mult", "batch", "max_epochs", "patience", "momentum"});
    if (m.contains("hidden")) cfg.mlp.hidden = m["hidden"].get<std::vector<std::size_t>>();
    if (m.contains("activation"))
      cfg.mlp.activation = activation_from_string(m["activation"].get<std::string>());
    cfg.mlp.l1_alpha = m.value("l1", cfg.mlp.l1_alpha);
    cfg.mlp.l2_alpha = m.value("l2", cfg.mlp.l2_alpha);
    if (m.contains("dropout")) cfg.mlp.dropout = m["dropout"].get<std::vector<double>>();
    cfg.mlp.lr_max = m.value("lr_max", cfg.mlp.lr_max);
    cfg.mlp.lr_min = m.value("lr_min", cfg.mlp.lr_min);
    cfg.mlp.t0 = m.value("t0", cfg.mlp.t0);
    cfg.mlp.t_mult = m.value("t_mult", cfg.mlp.t_mult);
    cfg.mlp.batch_size = m.value("batch", cfg.mlp.batch_size);
    cfg.mlp.max_epochs = m.value("max_epochs", cfg.mlp.max_epochs);
    cfg.mlp.patience = m.value("patience", cfg.mlp.patience);
    cfg.mlp.momentum = m.value("momentum", cfg.mlp.momentum);
  }
  if (doc.contains("lda")) {
    const json& l = doc["lda"];
    reject_unknown_keys(l, "lda", {"k", "epsilon"});
    cfg.lda_k = l.value("k", cfg.lda_k);
    cfg.lda_epsilon = l.value("epsilon", cfg.lda_epsilon);
  }
  if (doc.contains("svm")) {
    const json& s = doc["svm"];
    reject_unknown_keys(s, "svm", {"c", "kernel", "gamma", "balanced", "tol", "max_passes"});
    cfg.svm.c = s.value("c", cfg.svm.c);
    if (s.contains("kernel"))
      cfg.svm.kernel.kind = svm::kernel_from_string(s["kernel"].get<std::string>());
    if (s.contains("gamma")) {
      if (s["gamma"].is_number()) {
        cfg.svm.kernel.gamma_mode = svm::GammaMode::Explicit;
        cfg.svm.kernel.gamma_value = s["gamma"].get<double>();
      } else {
        const std::string g = s["gamma"].get<std::string>();
        if (g == "scale") cfg.svm.kernel.gamma_mode = svm::GammaMode::Scale;
        else if (g == "auto") cfg.svm.kernel.gamma_mode = svm::GammaMode::Auto;
        else throw ConfigError("svm gamma must be 'scale', 'auto' or a number");
      }
    }
    cfg.svm.balanced = s.value("balanced", cfg.svm.balanced);
    cfg.svm.tol = s.value("tol", cfg.svm.tol);
    cfg.svm.max_passes = s.value("max_passes", cfg.svm.max_passes);
  }
  if (doc.contains("hpo")) {
    const json& h = doc["hpo"];
    reject_unknown_keys(h, "hpo", {"mlp", "svm"});
    auto parse_section = [](const json& section, const char* where, HpoSection& out,
                            bool is_mlp) {
      reject_unknown_keys(section, where,
                          {"enabled", "trials", "folds", "epochs", "startup_trials",
                           "hidden_options", "batch_options"});
      out.enabled = section.value("enabled", false);
      out.trials = section.value("trials", out.trials);
      out.folds = section.value("folds", out.folds);
      out.epochs = section.value("epochs", out.epochs);
      out.startup_trials = section.value("startup_trials", out.startup_trials);
      if (section.contains("hidden_options")) {
        if (!is_mlp) throw ConfigError("hidden_options only applies to hpo.mlp");
        out.hidden_options =
            section["hidden_options"].get<std::vector<std::vector<std::size_t>>>();
      }
      if (section.contains("batch_options")) {
        if (!is_mlp) throw ConfigError("batch_options only applies to hpo.mlp");
        out.batch_options = section["batch_options"].get<std::vector<std::size_t>>();
      }
    };
    if (h.contains("mlp")) parse_section(h["mlp"], "hpo.mlp", cfg.hpo_mlp, true);
    if (h.contains("svm")) parse_section(h["svm"], "hpo.svm", cfg.hpo_svm, false);
  }
  if (doc.contains("explain")) {
    const json& e = doc["explain"];
    reject_unknown_keys(e, "explain", {"instances", "mode", "permutations"});
    cfg.explain.instances = e.value("instances", cfg.explain.instances);
    cfg.explain.mode = e.value("mode", cfg.explain.mode);
    cfg.explain.permutations = e.value("permutations", cfg.explain.permutations);
  }
  cfg.out_dir = doc.value("out", std::string());
  cfg.validate();
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const PipelineConfig& cfg) {
  json doc;
  doc["seed"] = cfg.seed;
  if (cfg.synthetic) {
    const auto& s = *cfg.synthetic;
    doc["data"]["synthetic"] = {{"classes", s.classes},       {"counts", s.counts},
                                {"informative", s.informative}, {"noise", s.noise},
                                {"categorical", s.categorical}, {"missing_rate", s.missing_rate},
                                {"separation", s.separation}};
  }
  if (cfg.table) {
    doc["data"]["table"] = {{"path", cfg.table->path.string()},
                            {"label_column", cfg.table->label_column},
                            {"missing_markers", std::vector<std::string>(
                                                    cfg.table->missing_markers.begin(),
                                                    cfg.table->missing_markers.end())}};
  }
  doc["preprocess"] = {{"k", cfg.select_k}};
  doc["split"] = {{"test_fraction", cfg.test_fraction},
                  {"validation_fraction", cfg.validation_fraction}};
  doc["mlp"] = {{"hidden", cfg.mlp.hidden},
                {"activation", std::string(activation_name(cfg.mlp.activation))},
                {"l1", cfg.mlp.l1_alpha},
                {"l2", cfg.mlp.l2_alpha},
                {"dropout", cfg.mlp.dropout},
                {"lr_max", cfg.mlp.lr_max},
                {"lr_min", cfg.mlp.lr_min},
                {"t0", cfg.mlp.t0},
                {"t_mult", cfg.mlp.t_mult},
                {"batch", cfg.mlp.batch_size},
                {"max_epochs", cfg.mlp.max_epochs},
                {"patience", cfg.mlp.patience},
                {"momentum", cfg.mlp.momentum}};
  doc["lda"] = {{"k", cfg.lda_k}, {"epsilon", cfg.lda_epsilon}};
  doc["svm"] = {{"c", cfg.svm.c},
                {"kernel", std::string(svm::kernel_name(cfg.svm.kernel.kind))},
                {"balanced", cfg.svm.balanced},
                {"tol", cfg.svm.tol},
                {"max_passes", cfg.svm.max_passes}};
  switch (cfg.svm.kernel.gamma_mode) {
    case svm::GammaMode::Scale: doc["svm"]["gamma"] = "scale"; break;
    case svm::GammaMode::Auto: doc["svm"]["gamma"] = "auto"; break;
    case svm::GammaMode::Explicit: doc["svm"]["gamma"] = cfg.svm.kernel.gamma_value; break;
  }
  auto hpo_json = [](const HpoSection& h) {
    json j = {{"enabled", h.enabled},
              {"trials", h.trials},
              {"folds", h.folds},
              {"epochs", h.epochs},
              {"startup_trials", h.startup_trials}};
    if (!h.hidden_options.empty()) j["hidden_options"] = h.hidden_options;
    if (!h.batch_options.empty()) j["batch_options"] = h.batch_options;
    return j;
  };
  doc["hpo"] = {{"mlp", hpo_json(cfg.hpo_mlp)}, {"svm", hpo_json(cfg.hpo_svm)}};
  doc["explain"] = {{"instances", cfg.explain.instances},
                    {"mode", cfg.explain.mode},
                    {"permutations", cfg.explain.permutations}};
  if (!cfg.out_dir.empty()) doc["out"] = cfg.out_dir;
  return doc.dump(2);
}

void ModelBundle::validate() const {
  if (preprocess.k != mlp.input_width())
    throw FormatError("width chain broken between sections 'preprocess' and 'mlp': " +
                      std::to_string(preprocess.k) + " features vs MLP input " +
                      std::to_string(mlp.input_width()));
  if (mlp.wa.rows != mlp.wa.cols)
    throw FormatError("section 'mlp' invalid: attention matrix is not square");
  if (mlp.representation_width() != lda.w.rows)
    throw FormatError("width chain broken between sections 'mlp' and 'lda': "
                      "representation width " +
                      std::to_string(mlp.representation_width()) + " vs LDA input " +
                      std::to_string(lda.w.rows));
  if (lda.k != lda.w.cols)
    throw FormatError("section 'lda' invalid: k does not match the projection width");
  for (const auto& machine : svm.machines)
    if (machine.support_vectors.rows > 0 && machine.support_vectors.cols != lda.k)
      throw FormatError("width chain broken between sections 'lda' and 'svm': " +
                        std::to_string(lda.k) + " components vs SVM width " +
                        std::to_string(machine.support_vectors.cols));
  if (svm.machines.size() != svm.class_names.size())
    throw FormatError("section 'svm' invalid: machine count vs class count");
  if (preprocess.selected.size() != preprocess.k)
    throw FormatError("section 'preprocess' invalid: selected index count vs k");
  for (std::size_t i = 0; i + 1 < preprocess.selected.size(); ++i)
    if (preprocess.selected[i] >= preprocess.selected[i + 1])
      throw FormatError(
          "section 'preprocess' invalid: selected indices not strictly increasing");
  for (double sd : preprocess.stats.stdev)
    if (!(sd > 0.0))
      throw FormatError(
          "section 'preprocess' invalid: non-positive standardization divisor");
}

dataio::Dataset subset_rows(const dataio::Dataset& ds, const std::vector<std::size_t>& idx) {
  dataio::Dataset out;
  out.feature_names = ds.feature_names;
  out.class_names = ds.class_names;
  out.x = Matrix(idx.size(), ds.x.cols);
  out.y.resize(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto src = ds.x.row(idx[i]);
    std::copy(src.begin(), src.end(), out.x.row(i).begin());
    out.y[i] = ds.y[idx[i]];
  }
  return out;
}

StagePredictions predict_stages(const ModelBundle& bundle, const Matrix& x) {
  StagePredictions out;
  const auto cache = mlp::forward(bundle.mlp, x, false, nullptr);
  out.mlp_probs = cache.probs;
  out.mlp_labels = argmax_rows(out.mlp_probs);
  out.lda_features = lda::transform(bundle.lda, cache.z);
  out.svm = svm::predict(bundle.svm, out.lda_features);
  return out;
}

std::vector<analysis::Explanation> explain_instances(const ModelBundle& bundle,
                                                     const Matrix& lda_features,
                                                     const ExplainSection& section,
                                                     std::uint64_t seed) {
  const std::size_t k = bundle.lda.k;
  if (section.mode == "exact" && k > 16)
    throw ConfigError("exact Shapley is capped at 16 features; use explain mode 'sample'");

  const Matrix baseline_row = lda::transform(bundle.lda, bundle.lda.global_mean);
  std::vector<double> baseline(baseline_row.data);

  std::vector<analysis::Explanation> out;
  out.reserve(lda_features.rows);
  const auto pred = svm::predict(bundle.svm, lda_features);
  for (std::size_t i = 0; i < lda_features.rows; ++i) {
    const auto& machine = bundle.svm.machines[pred.labels[i]];
    analysis::ScalarFn f = [&machine](std::span<const double> v) {
      return svm::decision(machine, v);
    };
    std::vector<double> instance(lda_features.row(i).begin(), lda_features.row(i).end());
    if (section.mode == "exact")
      out.push_back(analysis::shapley_exact(f, baseline, instance));
    else
      out.push_back(analysis::shapley_sample(f, baseline, instance, section.permutations,
                                             derive_seed(seed, i)));
  }
  return out;
}

hpo::SearchSpace mlp_search_space(const HpoSection& section) {
  std::vector<std::string> hidden;
  if (section.hidden_options.empty()) {
    hidden = {"512,256", "512,512", "1024,512"};
  } else {
    for (const auto& h : section.hidden_options) {
      if (h.size() != 2) throw ConfigError("hidden_options entries must have two sizes");
      hidden.push_back(std::to_string(h[0]) + "," + std::to_string(h[1]));
    }
  }
  std::vector<std::string> batch;
  if (section.batch_options.empty()) {
    batch = {"16", "32", "64", "128"};
  } else {
    for (std::size_t b : section.batch_options) batch.push_back(std::to_string(b));
  }
  hpo::SearchSpace space;
  space.categorical("hidden", hidden)
      .categorical("activation", {"relu", "tanh", "leaky_relu"})
      .log_uniform("l1", 1e-6, 1e-3)
      .log_uniform("l2", 1e-6, 1e-3)
      .uniform("dropout1", 0.1, 0.3)
      .uniform("dropout2", 0.1, 0.3)
      .log_uniform("lr", 1e-5, 1e-2)
      .categorical("batch", batch);
  return space;
}

hpo::SearchSpace svm_search_space() {
  hpo::SearchSpace space;
  space.categorical("kernel", {"linear", "rbf"})
      .log_uniform("c", 1e-3, 1e3)
      .categorical("gamma", {"scale", "auto"});
  return space;
}

hpo::Objective mlp_objective(dataio::Dataset train, mlp::MlpConfig base,
                             std::uint32_t epoch_cap) {
  return [train = std::move(train), base = std::move(base), epoch_cap](
             const hpo::ParamSet& params, std::uint32_t folds, std::uint64_t trial_seed,
             hpo::StepSink& sink) -> double {
    mlp::MlpConfig cfg = mlp_config_from_params(base, params);
    // All trials share the fold plan so their scores are comparable.
    const auto plan = dataio::stratified_folds(train.y, folds, derive_seed(base.seed, 0xF01d));
    std::vector<mlp::Trainer> trainers;
    trainers.reserve(folds);
    for (std::uint32_t f = 0; f < folds; ++f) {
      auto [val_idx, train_idx] = split_fold(plan, f);
      mlp::MlpConfig fold_cfg = cfg;
      fold_cfg.seed = derive_seed(trial_seed, f);
      trainers.emplace_back(fold_cfg, subset_rows(train, train_idx), subset_rows(train, val_idx));
    }
    double best = 0.0;
    for (std::uint32_t epoch = 0; epoch < epoch_cap; ++epoch) {
      double mean_acc = 0.0;
      for (auto& t : trainers) {
        t.run_epoch();
        mean_acc += t.last().val_accuracy;
      }
      mean_acc /= static_cast<double>(folds);
      best = std::max(best, mean_acc);
      sink.report(mean_acc);
    }
    return best;
  };
}

hpo::Objective svm_objective(Matrix lda_features, std::vector<std::uint32_t> y,
                             std::vector<std::string> class_names, svm::SvmConfig base) {
  return [x = std::move(lda_features), y = std::move(y), names = std::move(class_names),
          base](const hpo::ParamSet& params, std::uint32_t folds, std::uint64_t trial_seed,
                hpo::StepSink& sink) -> double {
    svm::SvmConfig cfg = svm_config_from_params(base, params);
    cfg.seed = trial_seed;
    const auto plan = dataio::stratified_folds(y, folds, derive_seed(base.seed, 0xF01d));
    double mean_acc = 0.0;
    dataio::Dataset all;
    all.x = x;
    all.y = y;
    all.class_names = names;
    for (std::uint32_t f = 0; f < folds; ++f) {
      auto [val_idx, train_idx] = split_fold(plan, f);
      const auto train_part = subset_rows(all, train_idx);
      const auto val_part = subset_rows(all, val_idx);
      const auto model = svm::fit_multiclass(train_part.x, train_part.y, names, cfg);
      const auto pred = svm::predict(model, val_part.x);
      std::size_t hits = 0;
      for (std::size_t i = 0; i < val_part.y.size(); ++i)
        hits += pred.labels[i] == val_part.y[i] ? 1 : 0;
      const double acc = static_cast<double>(hits) / static_cast<double>(val_part.y.size());
      sink.report(acc);
      mean_acc += acc;
    }
    return mean_acc / static_cast<double>(folds);
  };
}

namespace {

// Removes everything the run has written when a stage fails, so downstream
// tooling never sees half-finished reports.
class EmissionGuard {
 public:
  explicit EmissionGuard(std::vector<std::filesystem::path>& files) : files_(files) {}
  ~EmissionGuard() {
    if (!armed_) return;
    for (const auto& p : files_) {
      std::error_code ec;
      std::filesystem::remove(p, ec);
    }
  }
  void disarm() { armed_ = false; }

 private:
  std::vector<std::filesystem::path>& files_;
  bool armed_ = true;
};

void export_reports(const analysis::EvalReport& report, const std::string& tag,
                    const std::filesystem::path& dir,
                    const std::vector<std::uint32_t>& y_true,
                    const std::vector<std::uint32_t>& y_pred,
                    std::vector<std::filesystem::path>& emitted) {
  const auto track = [&](std::filesystem::path p) {
    emitted.push_back(p);
    return p;
  };
  analysis::export_metrics(report, track(dir / ("metrics_" + tag + ".csv")));
  analysis::export_summary(report, track(dir / ("summary_" + tag + ".csv")));
  analysis::export_confusion(analysis::confusion(y_true, y_pred, report.class_names),
                             track(dir / ("confusion_" + tag + ".csv")));
  analysis::export_pr(report.pr, report.class_names, track(dir / ("pr_" + tag + ".csv")));
}

}  // namespace

mlp::MlpModel train_mlp_stage(const PipelineConfig& config, const dataio::Dataset& train_set,
                              const std::filesystem::path& out_dir,
                              std::vector<std::filesystem::path>* emitted) {
  const auto track = [&](std::filesystem::path p) {
    if (emitted) emitted->push_back(p);
    return p;
  };
  mlp::MlpConfig mlp_cfg = config.mlp;
  mlp_cfg.seed = derive_seed(config.seed, 3);
  if (config.hpo_mlp.enabled) {
    const auto study = hpo::run_study(
        mlp_objective(train_set, mlp_cfg, config.hpo_mlp.epochs),
        mlp_search_space(config.hpo_mlp), config.hpo_mlp.trials, config.hpo_mlp.folds,
        derive_seed(config.seed, 5), {config.hpo_mlp.startup_trials, true});
    std::ofstream out(track(out_dir / "study_mlp.csv"), std::ios::binary);
    hpo::export_study(study, out);
    mlp_cfg = mlp_config_from_params(mlp_cfg, study.best_trial().params);
    mlp_cfg.seed = derive_seed(config.seed, 3);
  }

  const auto val_plan = dataio::stratified_folds(
      train_set.y, fraction_to_folds(config.validation_fraction, "validation_fraction"),
      derive_seed(config.seed, 2));
  auto [val_idx, inner_idx] = split_fold(val_plan, 0);
  const auto model =
      mlp::train(mlp_cfg, subset_rows(train_set, inner_idx), subset_rows(train_set, val_idx));
  {
    std::ofstream out(track(out_dir / "train_mlp.csv"), std::ios::binary);
    out << "epoch,lr,train_loss,train_accuracy,val_loss,val_accuracy\n";
    for (const auto& e : model.report.epochs)
      out << e.epoch << ',' << format_double(e.lr) << ',' << format_double(e.train_loss)
          << ',' << format_double(e.train_accuracy) << ',' << format_double(e.val_loss)
          << ',' << format_double(e.val_accuracy) << '\n';
  }
  return model;
}

svm::MulticlassSvm train_svm_stage(const PipelineConfig& config, const Matrix& lda_train,
                                   const std::vector<std::uint32_t>& y,
                                   const std::vector<std::string>& class_names,
                                   const std::filesystem::path& out_dir,
                                   std::vector<std::filesystem::path>* emitted) {
  svm::SvmConfig svm_cfg = config.svm;
  svm_cfg.seed = derive_seed(config.seed, 4);
  if (config.hpo_svm.enabled) {
    const auto study = hpo::run_study(
        svm_objective(lda_train, y, class_names, svm_cfg), svm_search_space(),
        config.hpo_svm.trials, config.hpo_svm.folds, derive_seed(config.seed, 6),
        {config.hpo_svm.startup_trials, true});
    const auto path = out_dir / "study_svm.csv";
    if (emitted) emitted->push_back(path);
    std::ofstream out(path, std::ios::binary);
    hpo::export_study(study, out);
    svm_cfg = svm_config_from_params(svm_cfg, study.best_trial().params);
    svm_cfg.seed = derive_seed(config.seed, 4);
  }
  return svm::fit_multiclass(lda_train, y, class_names, svm_cfg);
}

PipelineResult run_pipeline(const PipelineConfig& config,
                            const std::filesystem::path& out_dir) {
  config.validate();
  std::filesystem::create_directories(out_dir);

  PipelineResult result;
  EmissionGuard guard(result.emitted);
  const auto track = [&](std::filesystem::path p) {
    result.emitted.push_back(p);
    return p;
  };

  // Stage 1: ingest or synthesize.
  dataio::RawTable table;
  if (config.synthetic) {
    dataio::SyntheticSpec spec = *config.synthetic;
    spec.seed = config.seed;
    table = dataio::make_synthetic(spec);
    dataio::write_table_csv(table, track(out_dir / "table.csv"));
  } else {
    table = dataio::load_table(config.table->path, config.table->label_column,
                               config.table->missing_markers);
  }

  // Stage 2: preprocessing fit, then the held-out split.
  auto fitted = dataio::fit_preprocess(table, config.select_k);
  const dataio::Dataset& full = fitted.train;
  const std::size_t n_classes = full.class_names.size();

  const auto test_plan = dataio::stratified_folds(
      full.y, fraction_to_folds(config.test_fraction, "test_fraction"),
      derive_seed(config.seed, 1));
  auto [test_idx, train_idx] = split_fold(test_plan, 0);
  const auto train_set = subset_rows(full, train_idx);
  const auto test_set = subset_rows(full, test_idx);

  // Stage 3: representation learning.
  const auto mlp_model = train_mlp_stage(config, train_set, out_dir, &result.emitted);

  // Stage 4: LDA reduction of the attention representation.
  const Matrix z_train = mlp::extract_representation(mlp_model, train_set.x);
  const auto lda_model =
      lda::fit(z_train, train_set.y, n_classes, config.lda_k, config.lda_epsilon);
  const Matrix t_train = lda::transform(lda_model, z_train);

  // Stage 5: margin classifier on the LDA components.
  const auto svm_model =
      train_svm_stage(config, t_train, train_set.y, full.class_names, out_dir,
                      &result.emitted);

  // Stage 6: bundle, evaluation and exports.
  result.bundle.preprocess = fitted.model;
  result.bundle.mlp = mlp_model;
  result.bundle.lda = lda_model;
  result.bundle.svm = svm_model;
  result.bundle.config_json = config_to_json(config);
  persist(result.bundle, track(out_dir / "bundle.malpipe"));

  const auto stages = predict_stages(result.bundle, test_set.x);
  result.mlp_report =
      build_report(test_set.y, stages.mlp_labels, stages.mlp_probs, full.class_names);
  result.svm_report =
      build_report(test_set.y, stages.svm.labels, stages.svm.scores, full.class_names);
  export_reports(result.mlp_report, "mlp", out_dir, test_set.y, stages.mlp_labels,
                 result.emitted);
  export_reports(result.svm_report, "svm", out_dir, test_set.y, stages.svm.labels,
                 result.emitted);

  // Stage 7: Shapley explanations of the SVM margins on a seeded test subset.
  {
    Rng rng(derive_seed(config.seed, 7));
    auto order = rng.permutation(test_set.y.size());
    order.resize(std::min(config.explain.instances, order.size()));
    std::sort(order.begin(), order.end());
    Matrix subset_features(order.size(), stages.lda_features.cols);
    for (std::size_t i = 0; i < order.size(); ++i) {
      const auto src = stages.lda_features.row(order[i]);
      std::copy(src.begin(), src.end(), subset_features.row(i).begin());
    }
    const auto explanations = explain_instances(result.bundle, subset_features,
                                                config.explain, derive_seed(config.seed, 8));
    const auto names = lda_feature_names(config.lda_k);
    analysis::export_beeswarm(explanations, names, track(out_dir / "beeswarm_svm.csv"));
    if (!explanations.empty())
      analysis::export_waterfall(explanations[0], names, track(out_dir / "waterfall_svm.csv"));
    analysis::export_bar(analysis::global_importance(explanations), names,
                         track(out_dir / "importance_svm.csv"));
  }

  guard.disarm();
  return result;
}

Evaluation evaluate(const ModelBundle& bundle, const dataio::RawTable& table) {
  const auto applied = dataio::apply_preprocess(bundle.preprocess, table);
  if (!applied.has_labels)
    throw DataError("evaluate: the table has no '" + bundle.preprocess.label_column +
                    "' label column");
  const auto stages = predict_stages(bundle, applied.data.x);
  Evaluation out;
  out.mlp_report = build_report(applied.data.y, stages.mlp_labels, stages.mlp_probs,
                                applied.data.class_names);
  out.svm_report = build_report(applied.data.y, stages.svm.labels, stages.svm.scores,
                                applied.data.class_names);
  return out;
}

void classify(const ModelBundle& bundle, const dataio::RawTable& table,
              const std::filesystem::path& out_path) {
  const auto applied = dataio::apply_preprocess(bundle.preprocess, table);

  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw IoError("cannot write classification output: " + out_path.string());
  out << "row,predicted_class";
  for (const auto& name : bundle.svm.class_names) out << ",margin_" << name;
  out << '\n';

  if (applied.data.x.rows > 0) {
    const auto stages = predict_stages(bundle, applied.data.x);
    for (std::size_t i = 0; i < applied.data.x.rows; ++i) {
      out << i << ',' << bundle.svm.class_names[stages.svm.labels[i]];
      for (std::size_t c = 0; c < bundle.svm.class_names.size(); ++c)
        out << ',' << format_double(stages.svm.scores(i, c));
      out << '\n';
    }
  }
  if (applied.unseen_categories > 0)
    out << "#unseen_categories," << applied.unseen_categories << '\n';
  if (!out) throw IoError("write failed: " + out_path.string());
}

}  // namespace malpipe::pipeline

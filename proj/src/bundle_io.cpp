#include <cmath>

#include "malpipe/container.hpp"
#include "malpipe/pipeline.hpp"

namespace malpipe::pipeline {

namespace {

using container::Reader;
using container::SectionReader;
using container::SectionWriter;
using container::Writer;

void ensure_finite(const Matrix& m, const std::string& section) {
  for (double v : m.data)
    if (!std::isfinite(v))
      throw FormatError("container section '" + section + "' holds non-finite values");
}

void write_preprocess(SectionWriter& s, const dataio::PreprocessModel& p) {
  s.u32(static_cast<std::uint32_t>(p.feature_columns.size()));
  for (std::size_t j = 0; j < p.feature_columns.size(); ++j) {
    s.str(p.feature_columns[j]);
    s.u32(p.encodings[j] ? 1 : 0);
    if (p.encodings[j]) {
      s.u32(static_cast<std::uint32_t>(p.encodings[j]->values.size()));
      for (const auto& v : p.encodings[j]->values) s.str(v);
    }
    s.f64(p.medians[j]);
    s.f64(p.feature_min[j]);
    s.f64(p.feature_max[j]);
  }
  s.str(p.label_column);
  s.u32(static_cast<std::uint32_t>(p.label_table.values.size()));
  for (const auto& v : p.label_table.values) s.str(v);
  s.u32(static_cast<std::uint32_t>(p.k));
  s.u32_vec(std::vector<std::uint32_t>(p.selected.begin(), p.selected.end()));
  s.f64_vec(p.stats.mean);
  s.f64_vec(p.stats.stdev);
}

dataio::PreprocessModel read_preprocess(SectionReader& s) {
  dataio::PreprocessModel p;
  const std::uint32_t n_cols = s.u32();
  for (std::uint32_t j = 0; j < n_cols; ++j) {
    p.feature_columns.push_back(s.str());
    if (s.u32()) {
      dataio::CategoryTable table;
      const std::uint32_t n_values = s.u32();
      for (std::uint32_t v = 0; v < n_values; ++v) table.values.push_back(s.str());
      p.encodings.emplace_back(std::move(table));
    } else {
      p.encodings.emplace_back(std::nullopt);
    }
    p.medians.push_back(s.f64());
    p.feature_min.push_back(s.f64());
    p.feature_max.push_back(s.f64());
  }
  p.label_column = s.str();
  const std::uint32_t n_classes = s.u32();
  for (std::uint32_t v = 0; v < n_classes; ++v) p.label_table.values.push_back(s.str());
  p.k = s.u32();
  for (std::uint32_t v : s.u32_vec()) p.selected.push_back(v);
  p.stats.mean = s.f64_vec();
  p.stats.stdev = s.f64_vec();
  return p;
}

void write_mlp(SectionWriter& s, const mlp::MlpModel& m) {
  s.u32(static_cast<std::uint32_t>(m.config.hidden[0]));
  s.u32(static_cast<std::uint32_t>(m.config.hidden[1]));
  s.u32(static_cast<std::uint32_t>(m.config.activation));
  s.f64(m.config.l1_alpha);
  s.f64(m.config.l2_alpha);
  s.f64(m.config.dropout[0]);
  s.f64(m.config.dropout[1]);
  s.f64(m.config.lr_max);
  s.f64(m.config.lr_min);
  s.u32(static_cast<std::uint32_t>(m.config.t0));
  s.u32(static_cast<std::uint32_t>(m.config.t_mult));
  s.u32(static_cast<std::uint32_t>(m.config.batch_size));
  s.u32(static_cast<std::uint32_t>(m.config.max_epochs));
  s.u32(static_cast<std::uint32_t>(m.config.patience));
  s.f64(m.config.momentum);
  s.u64(m.config.seed);
  for (const Matrix* w : {&m.w1, &m.b1, &m.w2, &m.b2, &m.wa, &m.ba, &m.w_out, &m.b_out})
    s.matrix(*w);
  s.u32(static_cast<std::uint32_t>(m.report.epochs.size()));
  for (const auto& e : m.report.epochs) {
    s.u32(static_cast<std::uint32_t>(e.epoch));
    s.f64(e.lr);
    s.f64(e.train_loss);
    s.f64(e.train_accuracy);
    s.f64(e.val_loss);
    s.f64(e.val_accuracy);
  }
  s.u32(static_cast<std::uint32_t>(m.report.best_epoch));
}

mlp::MlpModel read_mlp(SectionReader& s) {
  mlp::MlpModel m;
  m.config.hidden = {s.u32(), s.u32()};
  m.config.activation = static_cast<Activation>(s.u32());
  m.config.l1_alpha = s.f64();
  m.config.l2_alpha = s.f64();
  m.config.dropout = {s.f64(), s.f64()};
  m.config.lr_max = s.f64();
  m.config.lr_min = s.f64();
  m.config.t0 = static_cast<int>(s.u32());
  m.config.t_mult = static_cast<int>(s.u32());
  m.config.batch_size = s.u32();
  m.config.max_epochs = s.u32();
  m.config.patience = s.u32();
  m.config.momentum = s.f64();
  m.config.seed = s.u64();
  for (Matrix* w : {&m.w1, &m.b1, &m.w2, &m.b2, &m.wa, &m.ba, &m.w_out, &m.b_out}) {
    *w = s.matrix();
    ensure_finite(*w, "mlp");
  }
  const std::uint32_t n_epochs = s.u32();
  for (std::uint32_t e = 0; e < n_epochs; ++e) {
    mlp::EpochStats st;
    st.epoch = s.u32();
    st.lr = s.f64();
    st.train_loss = s.f64();
    st.train_accuracy = s.f64();
    st.val_loss = s.f64();
    st.val_accuracy = s.f64();
    m.report.epochs.push_back(st);
  }
  m.report.best_epoch = s.u32();
  return m;
}

void write_lda(SectionWriter& s, const lda::LdaModel& m) {
  s.u32(static_cast<std::uint32_t>(m.k));
  s.f64(m.epsilon);
  s.matrix(m.w);
  s.matrix(m.global_mean);
  s.matrix(m.class_means);
}

lda::LdaModel read_lda(SectionReader& s) {
  lda::LdaModel m;
  m.k = s.u32();
  m.epsilon = s.f64();
  m.w = s.matrix();
  m.global_mean = s.matrix();
  m.class_means = s.matrix();
  ensure_finite(m.w, "lda");
  return m;
}

void write_svm(SectionWriter& s, const svm::MulticlassSvm& sv) {
  s.u32(static_cast<std::uint32_t>(sv.class_names.size()));
  for (const auto& name : sv.class_names) s.str(name);
  s.f64(sv.config.c);
  s.u32(static_cast<std::uint32_t>(sv.config.kernel.kind));
  s.u32(static_cast<std::uint32_t>(sv.config.kernel.gamma_mode));
  s.f64(sv.config.kernel.gamma_value);
  s.u32(sv.config.balanced ? 1 : 0);
  s.f64(sv.config.tol);
  s.u32(static_cast<std::uint32_t>(sv.config.max_passes));
  s.u64(sv.config.seed);
  for (const auto& machine : sv.machines) {
    s.u32(static_cast<std::uint32_t>(machine.kernel.kind));
    s.f64(machine.gamma);
    s.f64(machine.bias);
    s.matrix(machine.support_vectors);
    s.f64_vec(machine.coefficients);
  }
}

svm::MulticlassSvm read_svm(SectionReader& s) {
  svm::MulticlassSvm sv;
  const std::uint32_t n_classes = s.u32();
  for (std::uint32_t c = 0; c < n_classes; ++c) sv.class_names.push_back(s.str());
  sv.config.c = s.f64();
  sv.config.kernel.kind = static_cast<svm::KernelKind>(s.u32());
  sv.config.kernel.gamma_mode = static_cast<svm::GammaMode>(s.u32());
  sv.config.kernel.gamma_value = s.f64();
  sv.config.balanced = s.u32() != 0;
  sv.config.tol = s.f64();
  sv.config.max_passes = s.u32();
  sv.config.seed = s.u64();
  for (std::uint32_t c = 0; c < n_classes; ++c) {
    svm::BinarySvm machine;
    machine.kernel.kind = static_cast<svm::KernelKind>(s.u32());
    machine.gamma = s.f64();
    machine.kernel.gamma_mode = svm::GammaMode::Explicit;
    machine.kernel.gamma_value = machine.gamma;
    machine.bias = s.f64();
    machine.support_vectors = s.matrix();
    machine.coefficients = s.f64_vec();
    if (machine.coefficients.size() != machine.support_vectors.rows)
      throw FormatError("container section 'svm' has mismatched coefficient count");
    ensure_finite(machine.support_vectors, "svm");
    sv.machines.push_back(std::move(machine));
  }
  return sv;
}

void write_dataset(SectionWriter& s, const dataio::Dataset& d) {
  s.matrix(d.x);
  s.u32_vec(d.y);
  s.u32(static_cast<std::uint32_t>(d.feature_names.size()));
  for (const auto& n : d.feature_names) s.str(n);
  s.u32(static_cast<std::uint32_t>(d.class_names.size()));
  for (const auto& n : d.class_names) s.str(n);
}

dataio::Dataset read_dataset(SectionReader& s) {
  dataio::Dataset d;
  d.x = s.matrix();
  d.y = s.u32_vec();
  const std::uint32_t n_features = s.u32();
  for (std::uint32_t j = 0; j < n_features; ++j) d.feature_names.push_back(s.str());
  const std::uint32_t n_classes = s.u32();
  for (std::uint32_t c = 0; c < n_classes; ++c) d.class_names.push_back(s.str());
  return d;
}

}  // namespace

void persist(const ModelBundle& bundle, const std::filesystem::path& path) {
  bundle.validate();
  Writer writer;
  writer.add("meta").str("MODEL_BUNDLE");
  writer.add("config").str(bundle.config_json);
  write_preprocess(writer.add("preprocess"), bundle.preprocess);
  write_mlp(writer.add("mlp"), bundle.mlp);
  write_lda(writer.add("lda"), bundle.lda);
  write_svm(writer.add("svm"), bundle.svm);
  writer.write(path);
}

ModelBundle restore(const std::filesystem::path& path) {
  Reader reader(path);
  ModelBundle b;
  {
    auto s = reader.open("meta");
    const std::string kind = s.str();
    if (kind != "MODEL_BUNDLE")
      throw FormatError("container at " + path.string() + " is a '" + kind +
                        "', not a model bundle");
    s.expect_exhausted();
  }
  {
    auto s = reader.open("config");
    b.config_json = s.str();
    s.expect_exhausted();
  }
  {
    auto s = reader.open("preprocess");
    b.preprocess = read_preprocess(s);
    s.expect_exhausted();
  }
  {
    auto s = reader.open("mlp");
    b.mlp = read_mlp(s);
    s.expect_exhausted();
  }
  {
    auto s = reader.open("lda");
    b.lda = read_lda(s);
    s.expect_exhausted();
  }
  {
    auto s = reader.open("svm");
    b.svm = read_svm(s);
    s.expect_exhausted();
  }
  b.validate();
  return b;
}

PipelineConfig WorkState::config() const { return parse_config(config_json); }

std::vector<std::size_t> WorkState::train_rows() const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < test_plan.fold_of.size(); ++i)
    if (test_plan.fold_of[i] != 0) rows.push_back(i);
  return rows;
}

std::vector<std::size_t> WorkState::test_rows() const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < test_plan.fold_of.size(); ++i)
    if (test_plan.fold_of[i] == 0) rows.push_back(i);
  return rows;
}

void save_work(const WorkState& state, const std::filesystem::path& path) {
  Writer writer;
  writer.add("meta").str("PIPELINE_WORK");
  writer.add("config").str(state.config_json);
  write_preprocess(writer.add("preprocess"), state.preprocess);
  write_dataset(writer.add("dataset"), state.dataset);
  {
    auto& s = writer.add("split");
    s.u32(state.test_plan.folds);
    s.u64(state.test_plan.seed);
    s.u32_vec(state.test_plan.fold_of);
  }
  if (state.mlp) write_mlp(writer.add("mlp"), *state.mlp);
  if (state.z_train) writer.add("z").matrix(*state.z_train);
  if (state.lda) write_lda(writer.add("lda"), *state.lda);
  if (state.svm) write_svm(writer.add("svm"), *state.svm);
  writer.write(path);
}

WorkState load_work(const std::filesystem::path& path) {
  Reader reader(path);
  WorkState w;
  {
    auto s = reader.open("meta");
    const std::string kind = s.str();
    if (kind != "PIPELINE_WORK")
      throw FormatError("container at " + path.string() + " is a '" + kind +
                        "', not a pipeline work file");
    s.expect_exhausted();
  }
  {
    auto s = reader.open("config");
    w.config_json = s.str();
    s.expect_exhausted();
  }
  {
    auto s = reader.open("preprocess");
    w.preprocess = read_preprocess(s);
    s.expect_exhausted();
  }
  {
    auto s = reader.open("dataset");
    w.dataset = read_dataset(s);
    s.expect_exhausted();
  }
  {
    auto s = reader.open("split");
    w.test_plan.folds = s.u32();
    w.test_plan.seed = s.u64();
    w.test_plan.fold_of = s.u32_vec();
    s.expect_exhausted();
  }
  if (reader.has("mlp")) {
    auto s = reader.open("mlp");
    w.mlp = read_mlp(s);
    s.expect_exhausted();
  }
  if (reader.has("z")) {
    auto s = reader.open("z");
    w.z_train = s.matrix();
    s.expect_exhausted();
  }
  if (reader.has("lda")) {
    auto s = reader.open("lda");
    w.lda = read_lda(s);
    s.expect_exhausted();
  }
  if (reader.has("svm")) {
    auto s = reader.open("svm");
    w.svm = read_svm(s);
    s.expect_exhausted();
  }
  return w;
}

}  // namespace malpipe::pipeline

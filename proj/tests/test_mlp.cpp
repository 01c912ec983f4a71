#include <cmath>

#include "doctest.h"
#include "malpipe/mlp.hpp"
#include "oracles.hpp"

using namespace malpipe;
using namespace malpipe::mlp;

namespace {

MlpConfig tiny_config(std::uint64_t seed = 1) {
  MlpConfig cfg;
  cfg.hidden = {8, 8};
  cfg.dropout = {0.0, 0.0};
  cfg.lr_max = 0.05;
  cfg.lr_min = 1e-4;
  cfg.batch_size = 16;
  cfg.max_epochs = 30;
  cfg.seed = seed;
  return cfg;
}

dataio::Dataset blob_dataset(std::uint32_t per_class, double separation,
                             std::uint64_t seed) {
  dataio::SyntheticSpec spec;
  spec.classes = 2;
  spec.counts = {per_class, per_class};
  spec.informative = 2;
  spec.noise = 2;
  spec.separation = separation;
  spec.seed = seed;
  const auto table = dataio::make_synthetic(spec);
  return dataio::fit_preprocess(table, 4).train;
}

struct BatchGrads {
  double loss_value;
  Gradients grads;
};

BatchGrads batch_gradients(const MlpModel& model, const Matrix& x,
                           const std::vector<std::uint32_t>& y,
                           const std::vector<double>& weights) {
  const auto cache = forward(model, x, false, nullptr);
  return {loss(cache.probs, y, weights, model, model.config.l1_alpha,
               model.config.l2_alpha),
          backward(model, cache, y, weights, model.config.l1_alpha,
                   model.config.l2_alpha)};
}

double max_param_diff(const Gradients& a, const Gradients& b) {
  double worst = 0.0;
  const Matrix* lhs[] = {&a.w1, &a.b1, &a.w2, &a.b2, &a.wa, &a.ba, &a.w_out, &a.b_out};
  const Matrix* rhs[] = {&b.w1, &b.b1, &b.w2, &b.b2, &b.wa, &b.ba, &b.w_out, &b.b_out};
  for (int p = 0; p < 8; ++p)
    for (std::size_t i = 0; i < lhs[p]->data.size(); ++i)
      worst = std::max(worst, std::abs(lhs[p]->data[i] - rhs[p]->data[i]));
  return worst;
}

}  // namespace

TEST_CASE("attention with zero parameters is uniform") {
  Rng rng(2);
  const Matrix h = oracles::random_matrix(rng, 3, 4);
  const Matrix wa(4, 4), ba(1, 4);
  const auto [a, z] = attention_forward(h, wa, ba);
  for (double v : a.data) CHECK(v == 0.25);
  for (std::size_t i = 0; i < h.data.size(); ++i)
    CHECK(z.data[i] == h.data[i] * 0.25);
}

TEST_CASE("attention on a zero row is uniform with zero output") {
  Rng rng(3);
  Matrix wa = oracles::random_matrix(rng, 4, 4);
  Matrix ba(1, 4);
  const Matrix h(1, 4, 0.0);
  const auto [a, z] = attention_forward(h, wa, ba);
  double sum = 0.0;
  for (double v : a.data) sum += v;
  CHECK(std::abs(sum - 1.0) <= 1e-12);
  for (double v : z.data) CHECK(v == 0.0);
}

TEST_CASE("attention rows sum to one and z is the elementwise product") {
  Rng rng(4);
  for (int round = 0; round < 20; ++round) {
    const Matrix h = oracles::random_matrix(rng, 5, 6, -3.0, 3.0);
    const Matrix wa = oracles::random_matrix(rng, 6, 6);
    const Matrix ba = oracles::random_matrix(rng, 1, 6);
    const auto [a, z] = attention_forward(h, wa, ba);
    for (std::size_t i = 0; i < a.rows; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < a.cols; ++j) sum += a(i, j);
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
    for (std::size_t i = 0; i < z.data.size(); ++i)
      CHECK(z.data[i] == h.data[i] * a.data[i]);
  }
}

TEST_CASE("forward relu cutoff on a one-unit net") {
  MlpConfig cfg;
  cfg.hidden = {1, 1};
  cfg.seed = 0;
  MlpModel m = init_model(cfg, 1, 2);
  m.w1 = Matrix::from_rows({{1.0}});
  m.b1 = Matrix::from_rows({{-0.5}});
  const Matrix x(1, 1, 0.2);
  const auto cache = forward(m, x, false, nullptr);
  CHECK(cache.h1(0, 0) == 0.0);
}

TEST_CASE("forward probabilities are rows of a distribution, eval is pure") {
  Rng rng(5);
  MlpConfig cfg = tiny_config();
  MlpModel m = init_model(cfg, 6, 4);
  const Matrix x = oracles::random_matrix(rng, 9, 6);
  const auto c1 = forward(m, x, false, nullptr);
  const auto c2 = forward(m, x, false, nullptr);
  for (std::size_t i = 0; i < c1.probs.rows; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < c1.probs.cols; ++j) sum += c1.probs(i, j);
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
  for (std::size_t i = 0; i < c1.probs.data.size(); ++i)
    CHECK(c1.probs.data[i] == c2.probs.data[i]);
}

TEST_CASE("loss analytic anchors") {
  MlpConfig cfg = tiny_config();
  MlpModel m = init_model(cfg, 2, 3);
  const std::vector<double> unit(3, 1.0);

  Matrix onehot(2, 3);
  onehot(0, 1) = 1.0;
  onehot(1, 2) = 1.0;
  CHECK(loss(onehot, {1, 2}, unit, m, 0.0, 0.0) == doctest::Approx(0.0).epsilon(1e-12));

  const Matrix uniform(4, 3, 1.0 / 3.0);
  CHECK(loss(uniform, {0, 1, 2, 0}, unit, m, 0.0, 0.0) ==
        doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("integer weights equal sample replication in loss and gradients") {
  Rng rng(6);
  MlpConfig cfg = tiny_config(3);
  cfg.l1_alpha = 1e-4;
  cfg.l2_alpha = 1e-4;
  MlpModel m = init_model(cfg, 5, 3);
  m.config = cfg;

  const Matrix x = oracles::random_matrix(rng, 4, 5);
  const std::vector<std::uint32_t> y = {0, 1, 2, 1};
  const std::vector<double> weights = {2.0, 1.0, 3.0};

  Matrix xrep(2 + 1 + 3 + 1, 5);
  std::vector<std::uint32_t> yrep;
  std::size_t row = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto copies = static_cast<std::size_t>(weights[y[i]]);
    for (std::size_t c = 0; c < copies; ++c) {
      std::copy(x.row(i).begin(), x.row(i).end(), xrep.row(row).begin());
      yrep.push_back(y[i]);
      ++row;
    }
  }
  REQUIRE(row == xrep.rows);

  const auto weighted = batch_gradients(m, x, y, weights);
  const auto replicated = batch_gradients(m, xrep, yrep, {1.0, 1.0, 1.0});
  CHECK(std::abs(weighted.loss_value - replicated.loss_value) <= 1e-10);
  CHECK(max_param_diff(weighted.grads, replicated.grads) <= 1e-10);
}

TEST_CASE("lr_at endpoints are exact and restarts double the cycle") {
  CHECK(lr_at(1e-5, 1e-2, 0, 10) == 1e-2);
  CHECK(lr_at(1e-5, 1e-2, 10, 10) == 1e-5);
  CHECK(lr_at(1e-5, 1e-2, 5, 10) == 0.5 * (1e-5 + 1e-2));

  CosineRestartSchedule sched(1e-5, 1e-2, 4, 2);
  std::vector<double> rates;
  for (int i = 0; i < 13; ++i) {
    rates.push_back(sched.current());
    CHECK(sched.current() >= 1e-5);
    CHECK(sched.current() <= 1e-2);
    sched.advance();
  }
  CHECK(rates[0] == 1e-2);
  CHECK(rates[4] == 1e-2);   // restart after the first 4-epoch cycle
  CHECK(rates[12] == 1e-2);  // next cycle has length 8
  CHECK(rates[3] < rates[2]);
}

TEST_CASE("train separates a wide blob within 30 epochs") {
  const auto full = blob_dataset(120, 4.0, 71);
  std::vector<std::size_t> train_idx, val_idx;
  for (std::size_t i = 0; i < full.y.size(); ++i)
    (i % 5 == 0 ? val_idx : train_idx).push_back(i);

  dataio::Dataset train_set, val_set;
  train_set.class_names = val_set.class_names = full.class_names;
  train_set.feature_names = val_set.feature_names = full.feature_names;
  train_set.x = Matrix(train_idx.size(), full.x.cols);
  val_set.x = Matrix(val_idx.size(), full.x.cols);
  for (std::size_t i = 0; i < train_idx.size(); ++i) {
    std::copy(full.x.row(train_idx[i]).begin(), full.x.row(train_idx[i]).end(),
              train_set.x.row(i).begin());
    train_set.y.push_back(full.y[train_idx[i]]);
  }
  for (std::size_t i = 0; i < val_idx.size(); ++i) {
    std::copy(full.x.row(val_idx[i]).begin(), full.x.row(val_idx[i]).end(),
              val_set.x.row(i).begin());
    val_set.y.push_back(full.y[val_idx[i]]);
  }

  const MlpModel model = train(tiny_config(9), train_set, val_set);
  CHECK(model.report.epochs.size() <= 30);
  double best_val_acc = 0.0;
  for (const auto& e : model.report.epochs)
    best_val_acc = std::max(best_val_acc, e.val_accuracy);
  CHECK(best_val_acc >= 0.95);
}

TEST_CASE("patience one with a frozen optimizer stops after exactly two epochs") {
  const auto ds = blob_dataset(20, 2.0, 5);
  MlpConfig cfg = tiny_config(2);
  cfg.lr_max = 1e-30;  // effectively frozen
  cfg.lr_min = 1e-31;
  cfg.patience = 1;
  cfg.max_epochs = 50;
  const MlpModel model = train(cfg, ds, ds);
  CHECK(model.report.epochs.size() == 2);
}

TEST_CASE("training is deterministic under seed, including dropout") {
  const auto ds = blob_dataset(30, 3.0, 12);
  MlpConfig cfg = tiny_config(8);
  cfg.dropout = {0.2, 0.1};
  cfg.max_epochs = 5;
  const MlpModel a = train(cfg, ds, ds);
  const MlpModel b = train(cfg, ds, ds);
  REQUIRE(a.report.epochs.size() == b.report.epochs.size());
  for (std::size_t e = 0; e < a.report.epochs.size(); ++e) {
    CHECK(a.report.epochs[e].train_loss == b.report.epochs[e].train_loss);
    CHECK(a.report.epochs[e].val_loss == b.report.epochs[e].val_loss);
    CHECK(a.report.epochs[e].lr == b.report.epochs[e].lr);
  }
  for (std::size_t i = 0; i < a.w1.data.size(); ++i) CHECK(a.w1.data[i] == b.w1.data[i]);
}

TEST_CASE("training diverges loudly") {
  const auto ds = blob_dataset(30, 3.0, 13);
  MlpConfig cfg = tiny_config(3);
  // Leaky units never die, so an absurd rate compounds until the loss
  // turns non-finite instead of freezing a dead network.
  cfg.activation = Activation::LeakyRelu;
  cfg.lr_max = 1e18;
  cfg.lr_min = 1e17;
  cfg.max_epochs = 50;
  cfg.patience = 50;
  CHECK_THROWS_WITH_AS(train(cfg, ds, ds), doctest::Contains("epoch"), NumericError);
}

TEST_CASE("extract_representation matches the forward cache and uniform attention") {
  Rng rng(14);
  MlpConfig cfg = tiny_config(4);
  MlpModel m = init_model(cfg, 5, 3);
  const Matrix x = oracles::random_matrix(rng, 7, 5);

  const Matrix z1 = extract_representation(m, x);
  const Matrix z2 = extract_representation(m, x);
  const auto cache = forward(m, x, false, nullptr);
  for (std::size_t i = 0; i < z1.data.size(); ++i) {
    CHECK(z1.data[i] == z2.data[i]);
    CHECK(z1.data[i] == cache.z.data[i]);
  }
  // Zero attention parameters: z = h2 * (1/d) with d the hidden width.
  const double inv_d = 1.0 / 8.0;
  for (std::size_t i = 0; i < z1.data.size(); ++i)
    CHECK(z1.data[i] == cache.h2.data[i] * inv_d);
}

TEST_CASE("grad_check tiny nets stay under 1e-4") {
  Rng rng(15);
  const Matrix x = oracles::random_matrix(rng, 5, 4);
  const std::vector<std::uint32_t> y = {0, 1, 1, 0, 1};
  const std::vector<double> w = {1.0, 1.0};

  MlpConfig cfg;
  cfg.hidden = {3, 3};
  cfg.seed = 16;

  SUBCASE("plain tanh") {
    cfg.activation = Activation::Tanh;
    MlpModel m = init_model(cfg, 4, 2);
    CHECK(grad_check(m, x, y, w) <= 1e-4);
  }
  SUBCASE("relu with nonzero attention parameters") {
    cfg.activation = Activation::Relu;
    MlpModel m = init_model(cfg, 4, 2);
    Rng prng(17);
    for (auto& v : m.wa.data) v = prng.uniform(-0.5, 0.5);
    for (auto& v : m.ba.data) v = prng.uniform(-0.5, 0.5);
    CHECK(grad_check(m, x, y, w) <= 1e-4);
  }
  SUBCASE("regularized and away from zero weights") {
    cfg.activation = Activation::Tanh;
    cfg.l1_alpha = 1e-3;
    cfg.l2_alpha = 1e-3;
    MlpModel m = init_model(cfg, 4, 2);
    Rng prng(18);
    for (Matrix* mat : {&m.wa, &m.ba})
      for (auto& v : mat->data) v = prng.uniform(0.1, 0.6);
    CHECK(grad_check(m, x, y, w) <= 1e-4);
  }
}

TEST_CASE("L1 subgradient at exactly-zero weights contributes nothing") {
  Rng rng(19);
  MlpConfig cfg;
  cfg.hidden = {3, 3};
  cfg.activation = Activation::Tanh;
  cfg.l1_alpha = 1e-2;
  cfg.seed = 20;
  MlpModel m = init_model(cfg, 2, 2);
  m.w1(0, 0) = 0.0;

  const Matrix x = oracles::random_matrix(rng, 4, 2);
  const std::vector<std::uint32_t> y = {0, 1, 0, 1};
  const std::vector<double> w = {1.0, 1.0};
  const auto cache = forward(m, x, false, nullptr);
  const auto grads = backward(m, cache, y, w, cfg.l1_alpha, 0.0);

  // Central differences see no L1 push at the zeroed coordinate either,
  // matching the sign(0) = 0 convention.
  const double saved = m.w1(0, 0);
  const double eps = 1e-6;
  auto eval = [&]() {
    return loss(forward(m, x, false, nullptr).probs, y, w, m, cfg.l1_alpha, 0.0);
  };
  m.w1(0, 0) = saved + eps;
  const double up = eval();
  m.w1(0, 0) = saved - eps;
  const double down = eval();
  m.w1(0, 0) = saved;
  const double fd = (up - down) / (2.0 * eps);
  CHECK(std::abs(grads.w1(0, 0) - fd) <= 1e-5);
}

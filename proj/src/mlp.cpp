#include "malpipe/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace malpipe::mlp {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kLeakySlope = 0.01;
constexpr double kProbClamp = 1e-12;
constexpr double kImprovementEps = 1e-6;

Matrix add_row_bias(const Matrix& m, const Matrix& bias) {
  Matrix out = m;
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) out(i, j) += bias(0, j);
  return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows, a.cols);
  for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] * b.data[i];
  return out;
}

Matrix col_sums(const Matrix& m) {
  Matrix out(1, m.cols);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) out(0, j) += m(i, j);
  return out;
}

Matrix activation_grad(Activation kind, const Matrix& pre, const Matrix& post) {
  Matrix g(pre.rows, pre.cols);
  switch (kind) {
    case Activation::Relu:
      for (std::size_t i = 0; i < pre.data.size(); ++i)
        g.data[i] = pre.data[i] > 0.0 ? 1.0 : 0.0;
      break;
    case Activation::Tanh:
      for (std::size_t i = 0; i < pre.data.size(); ++i)
        g.data[i] = 1.0 - post.data[i] * post.data[i];
      break;
    case Activation::LeakyRelu:
      for (std::size_t i = 0; i < pre.data.size(); ++i)
        g.data[i] = pre.data[i] > 0.0 ? 1.0 : kLeakySlope;
      break;
  }
  return g;
}

double reg_penalty(const MlpModel& m, double l1, double l2) {
  if (l1 == 0.0 && l2 == 0.0) return 0.0;
  double abs_sum = 0.0, sq_sum = 0.0;
  for (const Matrix* w : {&m.w1, &m.w2, &m.wa, &m.w_out}) {
    for (double v : w->data) {
      abs_sum += std::abs(v);
      sq_sum += v * v;
    }
  }
  return l1 * abs_sum + l2 * sq_sum;
}

void add_reg_grad(Matrix& grad, const Matrix& w, double l1, double l2) {
  for (std::size_t i = 0; i < w.data.size(); ++i) {
    const double v = w.data[i];
    // sign(0) = 0: a parameter sitting exactly at zero gets no L1 push.
    const double sgn = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
    grad.data[i] += l1 * sgn + 2.0 * l2 * v;
  }
}

Matrix dropout_mask(std::size_t rows, std::size_t cols, double p, Rng& rng) {
  Matrix mask(rows, cols, 1.0);
  if (p <= 0.0) return mask;
  const double keep_scale = 1.0 / (1.0 - p);
  for (auto& v : mask.data) v = rng.uniform() < p ? 0.0 : keep_scale;
  return mask;
}

double accuracy_of(const Matrix& probs, const std::vector<std::uint32_t>& y) {
  if (y.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < probs.rows; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < probs.cols; ++j)
      if (probs(i, j) > probs(i, best)) best = j;
    if (best == y[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(y.size());
}

// Validation loss for early stopping: the weighted data term only, so the
// comparison tracks generalization rather than the shrinking penalty.
double data_loss(const Matrix& probs, const std::vector<std::uint32_t>& y,
                 const std::vector<double>& w) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < probs.rows; ++i) {
    const double wi = w[y[i]];
    num += wi * -std::log(std::max(probs(i, y[i]), kProbClamp));
    den += wi;
  }
  return den > 0.0 ? num / den : 0.0;
}

}  // namespace

void MlpConfig::validate() const {
  if (hidden.size() != 2) throw ConfigError("mlp: exactly two hidden layers are supported");
  for (std::size_t h : hidden)
    if (h < 1) throw ConfigError("mlp: hidden sizes must be at least 1");
  if (dropout.size() != 2) throw ConfigError("mlp: one dropout rate per hidden layer");
  for (double p : dropout)
    if (p < 0.0 || p >= 1.0) throw ConfigError("mlp: dropout rates must lie in [0, 1)");
  if (!(lr_min <= lr_max)) throw ConfigError("mlp: lr_min must not exceed lr_max");
  if (batch_size < 1) throw ConfigError("mlp: batch size must be at least 1");
  if (t0 < 1 || t_mult < 1) throw ConfigError("mlp: schedule needs t0 >= 1 and t_mult >= 1");
  if (max_epochs < 1) throw ConfigError("mlp: max_epochs must be at least 1");
}

MlpModel init_model(const MlpConfig& config, std::size_t input_width, std::size_t n_classes) {
  config.validate();
  MlpModel m;
  m.config = config;
  Rng rng(config.seed);

  auto init = [&](std::size_t fan_in, std::size_t fan_out) {
    Matrix w(fan_in, fan_out);
    const bool he = config.activation != Activation::Tanh;
    const double limit = he ? std::sqrt(6.0 / static_cast<double>(fan_in))
                            : std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (auto& v : w.data) v = rng.uniform(-limit, limit);
    return w;
  };

  const std::size_t h1 = config.hidden[0], h2 = config.hidden[1];
  m.w1 = init(input_width, h1);
  m.b1 = Matrix(1, h1);
  m.w2 = init(h1, h2);
  m.b2 = Matrix(1, h2);
  m.wa = Matrix(h2, h2);  // zero start: uniform attention
  m.ba = Matrix(1, h2);
  m.w_out = init(h2, n_classes);
  m.b_out = Matrix(1, n_classes);
  return m;
}

std::pair<Matrix, Matrix> attention_forward(const Matrix& h, const Matrix& wa,
                                            const Matrix& ba) {
  if (h.cols != wa.rows)
    throw ShapeError("attention_forward: input " + h.shape_str() + " vs W_a " +
                     wa.shape_str());
  const Matrix e = activate(Activation::Tanh, add_row_bias(matmul(h, wa), ba));
  const Matrix a = softmax_rows(e);
  return {a, hadamard(h, a)};
}

ForwardCache forward(const MlpModel& model, const Matrix& x, bool train_mode, Rng* rng) {
  if (x.cols != model.input_width())
    throw ShapeError("forward: input width " + x.shape_str() + " vs model input " +
                     std::to_string(model.input_width()));
  ForwardCache c;
  c.train_mode = train_mode;
  c.x = x;

  c.a1_pre = add_row_bias(matmul(x, model.w1), model.b1);
  c.h1 = activate(model.config.activation, c.a1_pre);
  if (train_mode) {
    c.mask1 = dropout_mask(c.h1.rows, c.h1.cols, model.config.dropout[0], *rng);
    c.d1 = hadamard(c.h1, c.mask1);
  } else {
    c.d1 = c.h1;
  }

  c.a2_pre = add_row_bias(matmul(c.d1, model.w2), model.b2);
  c.h2 = activate(model.config.activation, c.a2_pre);
  if (train_mode) {
    c.mask2 = dropout_mask(c.h2.rows, c.h2.cols, model.config.dropout[1], *rng);
    c.d2 = hadamard(c.h2, c.mask2);
  } else {
    c.d2 = c.h2;
  }

  c.e = activate(Activation::Tanh, add_row_bias(matmul(c.d2, model.wa), model.ba));
  c.attn = softmax_rows(c.e);
  c.z = hadamard(c.d2, c.attn);

  c.probs = softmax_rows(add_row_bias(matmul(c.z, model.w_out), model.b_out));
  return c;
}

double loss(const Matrix& probs, const std::vector<std::uint32_t>& y,
            const std::vector<double>& class_weights, const MlpModel& model, double l1,
            double l2) {
  return data_loss(probs, y, class_weights) + reg_penalty(model, l1, l2);
}

Gradients backward(const MlpModel& model, const ForwardCache& c,
                   const std::vector<std::uint32_t>& y,
                   const std::vector<double>& class_weights, double l1, double l2) {
  const std::size_t n = c.probs.rows;
  double weight_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) weight_sum += class_weights[y[i]];

  // Softmax + weighted cross-entropy collapse to (p - onehot) * w_i / sum w.
  Matrix d_logits = c.probs;
  for (std::size_t i = 0; i < n; ++i) {
    const double wi = class_weights[y[i]] / weight_sum;
    for (std::size_t j = 0; j < d_logits.cols; ++j) d_logits(i, j) *= wi;
    d_logits(i, y[i]) -= wi;
  }

  Gradients g;
  g.w_out = matmul(transpose(c.z), d_logits);
  g.b_out = col_sums(d_logits);
  const Matrix dz = matmul(d_logits, transpose(model.w_out));

  // z = u (.) a with u the (possibly dropped) last hidden output.
  Matrix du = hadamard(dz, c.attn);
  const Matrix da = hadamard(dz, c.d2);
  // Row-wise softmax Jacobian: de = a (.) (da - <da, a> 1).
  Matrix de(da.rows, da.cols);
  for (std::size_t i = 0; i < da.rows; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < da.cols; ++j) dot += da(i, j) * c.attn(i, j);
    for (std::size_t j = 0; j < da.cols; ++j)
      de(i, j) = c.attn(i, j) * (da(i, j) - dot);
  }
  // e = tanh(pre): d pre = de (.) (1 - e^2).
  Matrix d_apre(de.rows, de.cols);
  for (std::size_t i = 0; i < de.data.size(); ++i)
    d_apre.data[i] = de.data[i] * (1.0 - c.e.data[i] * c.e.data[i]);

  g.wa = matmul(transpose(c.d2), d_apre);
  g.ba = col_sums(d_apre);
  {
    const Matrix via_attn = matmul(d_apre, transpose(model.wa));
    for (std::size_t i = 0; i < du.data.size(); ++i) du.data[i] += via_attn.data[i];
  }

  Matrix dh2 = c.train_mode ? hadamard(du, c.mask2) : du;
  const Matrix d_a2 = hadamard(dh2, activation_grad(model.config.activation, c.a2_pre, c.h2));
  g.w2 = matmul(transpose(c.d1), d_a2);
  g.b2 = col_sums(d_a2);

  Matrix dd1 = matmul(d_a2, transpose(model.w2));
  Matrix dh1 = c.train_mode ? hadamard(dd1, c.mask1) : dd1;
  const Matrix d_a1 = hadamard(dh1, activation_grad(model.config.activation, c.a1_pre, c.h1));
  g.w1 = matmul(transpose(c.x), d_a1);
  g.b1 = col_sums(d_a1);

  add_reg_grad(g.w1, model.w1, l1, l2);
  add_reg_grad(g.w2, model.w2, l1, l2);
  add_reg_grad(g.wa, model.wa, l1, l2);
  add_reg_grad(g.w_out, model.w_out, l1, l2);
  return g;
}

double lr_at(double eta_min, double eta_max, int t_cur, int t_max) {
  if (t_cur <= 0) return eta_max;
  if (t_cur >= t_max) return eta_min;
  if (2 * t_cur == t_max) return 0.5 * (eta_min + eta_max);
  const double frac = static_cast<double>(t_cur) / static_cast<double>(t_max);
  return eta_min + 0.5 * (eta_max - eta_min) * (1.0 + std::cos(kPi * frac));
}

Trainer::Trainer(const MlpConfig& config, const dataio::Dataset& train,
                 const dataio::Dataset& val)
    : config_(config),
      train_(train),
      val_(val),
      weights_(dataio::class_weights(train.y, train.class_names.size())),
      model_(init_model(config, train.x.cols, train.class_names.size())),
      schedule_(config.lr_min, config.lr_max, config.t0, config.t_mult),
      rng_(derive_seed(config.seed, 0x7261696e)),  // training stream
      best_val_loss_(std::numeric_limits<double>::infinity()) {
  if (val.y.empty()) throw ConfigError("mlp train: validation set must be non-empty");
  if (train.x.cols != val.x.cols)
    throw ShapeError("mlp train: train/validation widths differ, " + train_.x.shape_str() +
                     " vs " + val_.x.shape_str());
  momentum_ = ParamState{
      Matrix(model_.w1.rows, model_.w1.cols),       Matrix(1, model_.b1.cols),
      Matrix(model_.w2.rows, model_.w2.cols),       Matrix(1, model_.b2.cols),
      Matrix(model_.wa.rows, model_.wa.cols),       Matrix(1, model_.ba.cols),
      Matrix(model_.w_out.rows, model_.w_out.cols), Matrix(1, model_.b_out.cols)};
  best_ = model_;
}

void Trainer::apply_update(const Gradients& g, double lr) {
  auto step = [&](Matrix& param, Matrix& vel, const Matrix& grad) {
    for (std::size_t i = 0; i < param.data.size(); ++i) {
      vel.data[i] = config_.momentum * vel.data[i] - lr * grad.data[i];
      param.data[i] += vel.data[i];
    }
  };
  step(model_.w1, momentum_.v_w1, g.w1);
  step(model_.b1, momentum_.v_b1, g.b1);
  step(model_.w2, momentum_.v_w2, g.w2);
  step(model_.b2, momentum_.v_b2, g.b2);
  step(model_.wa, momentum_.v_wa, g.wa);
  step(model_.ba, momentum_.v_ba, g.ba);
  step(model_.w_out, momentum_.v_w_out, g.w_out);
  step(model_.b_out, momentum_.v_b_out, g.b_out);
}

void Trainer::run_epoch() {
  const double lr = schedule_.current();
  const std::size_t n = train_.y.size();

  auto order = rng_.permutation(n);
  for (std::size_t start = 0; start < n; start += config_.batch_size) {
    const std::size_t stop = std::min(n, start + config_.batch_size);
    Matrix bx(stop - start, train_.x.cols);
    std::vector<std::uint32_t> by(stop - start);
    for (std::size_t k = start; k < stop; ++k) {
      const auto src = train_.x.row(order[k]);
      std::copy(src.begin(), src.end(), bx.row(k - start).begin());
      by[k - start] = train_.y[order[k]];
    }
    const ForwardCache cache = forward(model_, bx, true, &rng_);
    const Gradients g =
        backward(model_, cache, by, weights_, config_.l1_alpha, config_.l2_alpha);
    apply_update(g, lr);
  }

  EpochStats stats;
  stats.epoch = model_.report.epochs.size() + 1;
  stats.lr = lr;
  {
    const ForwardCache c = forward(model_, train_.x, false, nullptr);
    stats.train_loss =
        loss(c.probs, train_.y, weights_, model_, config_.l1_alpha, config_.l2_alpha);
    stats.train_accuracy = accuracy_of(c.probs, train_.y);
  }
  {
    const ForwardCache c = forward(model_, val_.x, false, nullptr);
    stats.val_loss = data_loss(c.probs, val_.y, weights_);
    stats.val_accuracy = accuracy_of(c.probs, val_.y);
  }
  if (!std::isfinite(stats.train_loss) || !std::isfinite(stats.val_loss))
    throw NumericError("mlp training diverged at epoch " + std::to_string(stats.epoch));

  model_.report.epochs.push_back(stats);
  if (best_val_loss_ - stats.val_loss >= kImprovementEps) {
    best_val_loss_ = stats.val_loss;
    best_ = model_;
    best_.report.best_epoch = stats.epoch;
  }
  schedule_.advance();
}

MlpModel Trainer::best_model() const {
  MlpModel out = best_;
  out.report.epochs = model_.report.epochs;  // full history, best weights
  return out;
}

MlpModel train(const MlpConfig& config, const dataio::Dataset& train_set,
               const dataio::Dataset& val_set) {
  Trainer trainer(config, train_set, val_set);
  std::size_t stale = 0;
  double best = std::numeric_limits<double>::infinity();
  while (trainer.epochs_run() < config.max_epochs) {
    trainer.run_epoch();
    if (best - trainer.last().val_loss >= kImprovementEps) {
      best = trainer.last().val_loss;
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }
  return trainer.best_model();
}

Matrix extract_representation(const MlpModel& model, const Matrix& x) {
  return forward(model, x, false, nullptr).z;
}

double grad_check(const MlpModel& model, const Matrix& x, const std::vector<std::uint32_t>& y,
                  const std::vector<double>& class_weights, double epsilon) {
  MlpModel probe = model;
  const double l1 = model.config.l1_alpha, l2 = model.config.l2_alpha;

  const ForwardCache cache = forward(probe, x, false, nullptr);
  const Gradients analytic = backward(probe, cache, y, class_weights, l1, l2);

  auto eval = [&]() {
    return loss(forward(probe, x, false, nullptr).probs, y, class_weights, probe, l1, l2);
  };

  double worst = 0.0;
  auto check_param = [&](Matrix& param, const Matrix& grad) {
    for (std::size_t i = 0; i < param.data.size(); ++i) {
      const double saved = param.data[i];
      param.data[i] = saved + epsilon;
      const double up = eval();
      param.data[i] = saved - epsilon;
      const double down = eval();
      param.data[i] = saved;
      const double fd = (up - down) / (2.0 * epsilon);
      const double ga = grad.data[i];
      const double rel = std::abs(ga - fd) / std::max(1e-8, std::abs(ga) + std::abs(fd));
      worst = std::max(worst, rel);
    }
  };
  check_param(probe.w1, analytic.w1);
  check_param(probe.b1, analytic.b1);
  check_param(probe.w2, analytic.w2);
  check_param(probe.b2, analytic.b2);
  check_param(probe.wa, analytic.wa);
  check_param(probe.ba, analytic.ba);
  check_param(probe.w_out, analytic.w_out);
  check_param(probe.b_out, analytic.b_out);
  return worst;
}

}  // namespace malpipe::mlp

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "malpipe/dataio.hpp"
#include "malpipe/numerics.hpp"

namespace malpipe::mlp {

struct MlpConfig {
  std::vector<std::size_t> hidden = {512, 256};  // exactly two layers
  Activation activation = Activation::Relu;
  double l1_alpha = 0.0;
  double l2_alpha = 0.0;
  std::vector<double> dropout = {0.0, 0.0};  // per hidden layer, in [0,1)
  double lr_max = 1e-2;
  double lr_min = 1e-5;
  int t0 = 10;       // epochs in the first cosine cycle
  int t_mult = 2;    // cycle growth at each restart
  std::size_t batch_size = 32;
  std::size_t max_epochs = 30;
  std::size_t patience = 5;  // early-stop epochs without improvement
  double momentum = 0.9;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochStats {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;  // 1-based epoch whose weights were kept
};

// Two hidden layers, a square attention block on the last hidden output,
// and a softmax head. Biases are 1-row matrices.
struct MlpModel {
  Matrix w1, b1;
  Matrix w2, b2;
  Matrix wa, ba;  // attention: wa is square of side hidden.back()
  Matrix w_out, b_out;
  MlpConfig config;
  TrainReport report;

  std::size_t input_width() const { return w1.rows; }
  std::size_t representation_width() const { return wa.rows; }
  std::size_t n_classes() const { return w_out.cols; }
};

// Seeded initialization: He-style fan-in scaling for relu/leaky, Xavier for
// tanh; attention parameters start at zero so training begins from uniform
// attention. Biases start at zero.
MlpModel init_model(const MlpConfig& config, std::size_t input_width, std::size_t n_classes);

struct ForwardCache {
  Matrix x;
  Matrix a1_pre, h1, mask1, d1;
  Matrix a2_pre, h2, mask2, d2;
  Matrix e, attn, z;
  Matrix probs;
  bool train_mode = false;
};

// e = tanh(h W_a + b_a); a = row softmax(e); z = h (.) a.
// Every row of a sums to 1.
std::pair<Matrix, Matrix> attention_forward(const Matrix& h, const Matrix& wa,
                                            const Matrix& ba);

// Full forward pass. In train mode, inverted dropout masks are drawn from
// rng and activations are scaled by 1/(1-p); in eval mode dropout is a
// no-op and rng is unused.
ForwardCache forward(const MlpModel& model, const Matrix& x, bool train_mode, Rng* rng);

// Weighted mean cross-entropy plus L1/L2 penalties on the weight matrices
// (biases excluded). Probabilities are clamped at 1e-12 before the log.
double loss(const Matrix& probs, const std::vector<std::uint32_t>& y,
            const std::vector<double>& class_weights, const MlpModel& model, double l1,
            double l2);

struct Gradients {
  Matrix w1, b1, w2, b2, wa, ba, w_out, b_out;
};

Gradients backward(const MlpModel& model, const ForwardCache& cache,
                   const std::vector<std::uint32_t>& y,
                   const std::vector<double>& class_weights, double l1, double l2);

// Cosine-annealing value: eta_min + (eta_max-eta_min)/2 * (1+cos(pi t/T)).
// The pinned points t=0, t=T and t=T/2 are returned exactly.
double lr_at(double eta_min, double eta_max, int t_cur, int t_max);

// Warm-restart bookkeeping: t_cur counts epochs inside the current cycle;
// at the end of a cycle the rate jumps back to eta_max and the cycle length
// multiplies by t_mult.
struct CosineRestartSchedule {
  double eta_min, eta_max;
  int t_mult;
  int t_cur = 0;
  int t_max;

  CosineRestartSchedule(double lr_min, double lr_max, int t0, int mult)
      : eta_min(lr_min), eta_max(lr_max), t_mult(mult), t_max(t0) {}
  double current() const { return lr_at(eta_min, eta_max, t_cur, t_max); }
  void advance() {
    if (++t_cur >= t_max) {
      t_cur = 0;
      t_max *= t_mult;
    }
  }
};

// Epoch-stepped trainer so cross-validation harnesses can interleave folds.
// Minibatch SGD with momentum on the composite loss; per-epoch seeded
// shuffles; per-epoch stats are recomputed in eval mode.
class Trainer {
 public:
  Trainer(const MlpConfig& config, const dataio::Dataset& train, const dataio::Dataset& val);

  // Runs one epoch and appends a report row. Throws NumericError when the
  // loss turns non-finite.
  void run_epoch();

  const EpochStats& last() const { return model_.report.epochs.back(); }
  std::size_t epochs_run() const { return model_.report.epochs.size(); }
  const MlpModel& model() const { return model_; }

  // Snapshot of the best-validation-loss epoch seen so far.
  MlpModel best_model() const;
  double best_val_loss() const { return best_val_loss_; }

 private:
  struct ParamState {
    Matrix v_w1, v_b1, v_w2, v_b2, v_wa, v_ba, v_w_out, v_b_out;
  };

  void apply_update(const Gradients& g, double lr);

  MlpConfig config_;
  const dataio::Dataset train_;
  const dataio::Dataset val_;
  std::vector<double> weights_;
  MlpModel model_;
  ParamState momentum_;
  CosineRestartSchedule schedule_;
  Rng rng_;
  double best_val_loss_;
  MlpModel best_;
};

// Full training protocol: runs epochs until max_epochs or until validation
// loss fails to improve by at least 1e-6 for `patience` consecutive epochs,
// then returns the parameters from the best-validation epoch.
MlpModel train(const MlpConfig& config, const dataio::Dataset& train,
               const dataio::Dataset& val);

// The attention-weighted representation z, dropout disabled.
Matrix extract_representation(const MlpModel& model, const Matrix& x);

// Max relative error between analytic gradients and central finite
// differences over every parameter, dropout disabled.
double grad_check(const MlpModel& model, const Matrix& x, const std::vector<std::uint32_t>& y,
                  const std::vector<double>& class_weights, double epsilon = 1e-5);

}  // namespace malpipe::mlp

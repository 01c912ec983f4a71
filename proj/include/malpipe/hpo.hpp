#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

#include "malpipe/numerics.hpp"

namespace malpipe::hpo {

using ParamValue = std::variant<double, std::string>;
using ParamSet = std::map<std::string, ParamValue>;  // sorted keys

double as_number(const ParamSet& params, const std::string& name);
const std::string& as_text(const ParamSet& params, const std::string& name);

struct Dimension {
  enum class Kind { Categorical, Uniform, LogUniform };
  std::string name;
  Kind kind = Kind::Uniform;
  std::vector<std::string> options;  // categorical
  double lo = 0.0;
  double hi = 0.0;
};

struct SearchSpace {
  std::vector<Dimension> dims;

  SearchSpace& categorical(std::string name, std::vector<std::string> options);
  SearchSpace& uniform(std::string name, double lo, double hi);
  SearchSpace& log_uniform(std::string name, double lo, double hi);
  void validate() const;
};

// Draws one value per dimension in declaration order: categoricals uniform,
// log ranges via exp(uniform(ln lo, ln hi)), uniform ranges direct.
ParamSet sample(const SearchSpace& space, Rng& rng);

struct Trial {
  std::uint32_t index = 0;
  ParamSet params;
  std::vector<double> steps;
  std::optional<double> objective;  // absent for pruned/failed trials
  enum class Status { Complete, Pruned, Failed } status = Status::Failed;
  double wall_seconds = 0.0;  // operator info only; never exported
};

struct StudyReport {
  std::vector<Trial> trials;
  std::optional<std::uint32_t> best;  // complete trial maximizing the objective
  std::uint64_t seed = 0;

  const Trial& best_trial() const;
};

enum class PruneDecision { Continue, Prune };

// Median rule: prune iff at least `startup` trials have completed and the
// candidate value is strictly below the median of the completed trials'
// values at the same step.
PruneDecision prune_decision(const std::vector<Trial>& trials, std::size_t step, double value,
                             std::size_t startup);

// Thrown by StepSink::report to unwind a pruned objective; run_study
// catches it.
struct TrialPruned {};

class StepSink {
 public:
  StepSink(std::vector<Trial>& trials, std::vector<double>& steps, std::size_t startup,
           bool pruning_enabled)
      : trials_(trials), steps_(steps), startup_(startup), enabled_(pruning_enabled) {}

  // Records an intermediate value; throws TrialPruned when the median rule
  // says to stop.
  void report(double value);

 private:
  std::vector<Trial>& trials_;
  std::vector<double>& steps_;
  std::size_t startup_;
  bool enabled_;
};

// The objective sees its sampled parameters, the study-wide fold count, a
// per-trial derived seed, and a sink for intermediate values. It must be a
// deterministic function of those inputs.
using Objective =
    std::function<double(const ParamSet&, std::uint32_t folds, std::uint64_t trial_seed,
                         StepSink&)>;

struct StudyOptions {
  std::size_t startup_trials = 5;
  bool pruning = true;
};

// Runs n seeded random-search trials in index order. Parameters are sampled
// up front from one stream so they are replayable; objective failures are
// recorded and the study continues. Best = argmax objective among complete
// trials, ties to the lowest index.
StudyReport run_study(const Objective& objective, const SearchSpace& space,
                      std::uint32_t n_trials, std::uint32_t folds, std::uint64_t seed,
                      const StudyOptions& options = {});

// One record per trial: index, params, status, score, steps. Wall time is
// deliberately absent so exports are byte-stable across runs.
void export_study(const StudyReport& report, std::ostream& out);

}  // namespace malpipe::hpo

#include "malpipe/hpo.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "malpipe/text.hpp"

namespace malpipe::hpo {

double as_number(const ParamSet& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw ConfigError("missing parameter '" + name + "'");
  if (const double* v = std::get_if<double>(&it->second)) return *v;
  throw ConfigError("parameter '" + name + "' is not numeric");
}

const std::string& as_text(const ParamSet& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw ConfigError("missing parameter '" + name + "'");
  if (const std::string* v = std::get_if<std::string>(&it->second)) return *v;
  throw ConfigError("parameter '" + name + "' is not categorical");
}

SearchSpace& SearchSpace::categorical(std::string name, std::vector<std::string> options) {
  dims.push_back({std::move(name), Dimension::Kind::Categorical, std::move(options), 0, 0});
  return *this;
}

SearchSpace& SearchSpace::uniform(std::string name, double lo, double hi) {
  dims.push_back({std::move(name), Dimension::Kind::Uniform, {}, lo, hi});
  return *this;
}

SearchSpace& SearchSpace::log_uniform(std::string name, double lo, double hi) {
  dims.push_back({std::move(name), Dimension::Kind::LogUniform, {}, lo, hi});
  return *this;
}

void SearchSpace::validate() const {
  for (const auto& d : dims) {
    switch (d.kind) {
      case Dimension::Kind::Categorical:
        if (d.options.empty())
          throw ConfigError("search dimension '" + d.name + "' has no options");
        break;
      case Dimension::Kind::Uniform:
        if (!(d.lo <= d.hi))
          throw ConfigError("search dimension '" + d.name + "' has lo > hi");
        break;
      case Dimension::Kind::LogUniform:
        if (!(0.0 < d.lo && d.lo <= d.hi))
          throw ConfigError("log search dimension '" + d.name + "' needs 0 < lo <= hi");
        break;
    }
  }
}

ParamSet sample(const SearchSpace& space, Rng& rng) {
  space.validate();
  ParamSet out;
  for (const auto& d : space.dims) {
    switch (d.kind) {
      case Dimension::Kind::Categorical:
        out[d.name] = d.options[static_cast<std::size_t>(rng.below(d.options.size()))];
        break;
      case Dimension::Kind::Uniform:
        out[d.name] = d.lo == d.hi ? d.lo : rng.uniform(d.lo, d.hi);
        break;
      case Dimension::Kind::LogUniform:
        out[d.name] =
            d.lo == d.hi ? d.lo : std::exp(rng.uniform(std::log(d.lo), std::log(d.hi)));
        break;
    }
  }
  return out;
}

const Trial& StudyReport::best_trial() const {
  if (!best) throw DataError("study has no complete trial");
  return trials[*best];
}

PruneDecision prune_decision(const std::vector<Trial>& trials, std::size_t step, double value,
                             std::size_t startup) {
  std::size_t completed = 0;
  std::vector<double> at_step;
  for (const auto& t : trials) {
    if (t.status != Trial::Status::Complete) continue;
    ++completed;
    if (t.steps.size() > step) at_step.push_back(t.steps[step]);
  }
  if (completed < startup || at_step.empty()) return PruneDecision::Continue;
  std::sort(at_step.begin(), at_step.end());
  const std::size_t n = at_step.size();
  const double median =
      n % 2 == 1 ? at_step[n / 2] : 0.5 * (at_step[n / 2 - 1] + at_step[n / 2]);
  return value < median ? PruneDecision::Prune : PruneDecision::Continue;
}

void StepSink::report(double value) {
  const std::size_t step = steps_.size();
  steps_.push_back(value);
  if (!enabled_) return;
  if (prune_decision(trials_, step, value, startup_) == PruneDecision::Prune)
    throw TrialPruned{};
}

StudyReport run_study(const Objective& objective, const SearchSpace& space,
                      std::uint32_t n_trials, std::uint32_t folds, std::uint64_t seed,
                      const StudyOptions& options) {
  StudyReport report;
  report.seed = seed;
  report.trials.reserve(n_trials);

  // Parameters come from one seeded stream, sampled up front, so the
  // sequence is replayable independent of trial outcomes.
  Rng sampler(seed);
  std::vector<ParamSet> params;
  params.reserve(n_trials);
  for (std::uint32_t t = 0; t < n_trials; ++t) params.push_back(sample(space, sampler));

  for (std::uint32_t t = 0; t < n_trials; ++t) {
    Trial trial;
    trial.index = t;
    trial.params = params[t];
    StepSink sink(report.trials, trial.steps, options.startup_trials, options.pruning);
    const auto start = std::chrono::steady_clock::now();
    try {
      const double value = objective(trial.params, folds, derive_seed(seed, t), sink);
      trial.objective = value;
      trial.status = Trial::Status::Complete;
    } catch (const TrialPruned&) {
      trial.status = Trial::Status::Pruned;
    } catch (const std::exception&) {
      trial.status = Trial::Status::Failed;
    }
    trial.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report.trials.push_back(std::move(trial));
  }

  for (std::uint32_t t = 0; t < n_trials; ++t) {
    const Trial& trial = report.trials[t];
    if (trial.status != Trial::Status::Complete) continue;
    if (!report.best || *trial.objective > *report.trials[*report.best].objective)
      report.best = t;
  }
  return report;
}

void export_study(const StudyReport& report, std::ostream& out) {
  out << "index,params,status,score,steps\n";
  for (const auto& t : report.trials) {
    out << t.index << ',';
    bool first = true;
    for (const auto& [name, value] : t.params) {
      if (!first) out << ';';
      first = false;
      out << name << '=';
      if (const double* v = std::get_if<double>(&value)) out << format_double(*v);
      else out << std::get<std::string>(value);
    }
    out << ',';
    switch (t.status) {
      case Trial::Status::Complete: out << "complete"; break;
      case Trial::Status::Pruned: out << "pruned"; break;
      case Trial::Status::Failed: out << "failed"; break;
    }
    out << ',';
    if (t.objective) out << format_double(*t.objective);
    out << ',';
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
      if (i) out << ';';
      out << format_double(t.steps[i]);
    }
    out << '\n';
  }
}

}  // namespace malpipe::hpo

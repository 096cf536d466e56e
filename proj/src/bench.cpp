#include "chordfit/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "chordfit/error.hpp"

namespace chordfit::bench {

namespace {

void check_trial_shapes(std::span<const dispatch::RunReport> trials) {
  if (trials.empty()) throw Error(Errc::shape, "per-chord table needs at least one trial");
  for (const auto& t : trials) {
    if (t.records.size() != trials.front().records.size()) {
      throw Error(Errc::shape, "trials cover different numbers of chords");
    }
    for (std::size_t i = 0; i < t.records.size(); ++i) {
      if (t.records[i].index != trials.front().records[i].index) {
        throw Error(Errc::shape, "trials list chords in different orders");
      }
    }
  }
}

}  // namespace

TrialSet summarize(std::string mode, std::vector<double> trials) {
  TrialSet t;
  t.mode = std::move(mode);
  t.trials = std::move(trials);
  if (t.trials.empty()) return t;
  const double n = static_cast<double>(t.trials.size());
  t.mean = std::accumulate(t.trials.begin(), t.trials.end(), 0.0) / n;
  if (t.trials.size() > 1) {
    double ss = 0.0;
    for (double x : t.trials) ss += (x - t.mean) * (x - t.mean);
    t.stddev = std::sqrt(ss / (n - 1.0));
    t.stddev_defined = true;
  }
  return t;
}

TrialSet benchmark(const std::function<void()>& runner, std::size_t trials, std::string mode) {
  if (trials < 1) throw Error(Errc::domain, "benchmark needs at least one trial");
  std::vector<double> wall;
  std::optional<std::string> failure;
  for (std::size_t i = 0; i < trials; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      runner();
    } catch (const std::exception& e) {
      failure = "trial " + std::to_string(i + 1) + ": " + e.what();
      break;
    }
    wall.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  TrialSet t = summarize(std::move(mode), std::move(wall));
  t.failure = std::move(failure);
  return t;
}

double speedup(double t_serial, double t_parallel) {
  if (!(t_serial > 0.0) || !(t_parallel > 0.0) || !std::isfinite(t_serial) || !std::isfinite(t_parallel)) {
    throw Error(Errc::domain, "speedup needs positive finite times");
  }
  return t_serial / t_parallel;
}

ScalingAnalysis scaling_bounds_from_totals(double total_work, double max_task, std::size_t workers,
                                           std::size_t tasks, std::optional<double> observed) {
  if (workers < 1) throw Error(Errc::domain, "scaling analysis needs at least one worker");
  if (!std::isfinite(total_work) || total_work < 0.0 || max_task < 0.0 || max_task > total_work) {
    throw Error(Errc::domain, "need total_work >= 0 and 0 <= max_task <= total_work");
  }
  ScalingAnalysis s;
  s.total_work = total_work;
  s.max_task = max_task;
  s.workers = workers;
  s.tasks = tasks;
  s.even_split = total_work / static_cast<double>(workers);
  s.lower_bound_makespan = std::max(max_task, s.even_split);
  s.ideal_speedup = s.lower_bound_makespan > 0.0 ? total_work / s.lower_bound_makespan : 1.0;
  if (observed) {
    s.observed_makespan = observed;
    s.overhead = *observed - s.lower_bound_makespan;
  }
  return s;
}

ScalingAnalysis scaling_bounds(std::span<const double> durations, std::size_t workers,
                               std::optional<double> observed) {
  if (durations.empty()) throw Error(Errc::domain, "scaling analysis needs at least one duration");
  for (double d : durations) {
    if (!std::isfinite(d) || d < 0.0) throw Error(Errc::domain, "durations must be finite and >= 0");
  }
  const double total = std::accumulate(durations.begin(), durations.end(), 0.0);
  const double longest = *std::max_element(durations.begin(), durations.end());
  return scaling_bounds_from_totals(total, longest, workers, durations.size(), observed);
}

std::string per_chord_table(std::span<const dispatch::RunReport> trials) {
  check_trial_shapes(trials);
  std::ostringstream os;
  os.precision(9);
  os << "chord";
  for (std::size_t t = 0; t < trials.size(); ++t) os << ",trial_" << (t + 1);
  os << "\n";
  for (std::size_t i = 0; i < trials.front().records.size(); ++i) {
    os << trials.front().records[i].index;
    for (const auto& t : trials) os << ',' << t.records[i].duration();
    os << "\n";
  }
  return os.str();
}

std::string per_chord_gnuplot(std::span<const dispatch::RunReport> trials) {
  check_trial_shapes(trials);
  std::ostringstream os;
  os.precision(9);
  os << "# chord";
  for (std::size_t t = 0; t < trials.size(); ++t) os << " trial_" << (t + 1) << "_s";
  os << "\n";
  for (std::size_t i = 0; i < trials.front().records.size(); ++i) {
    os << trials.front().records[i].index;
    for (const auto& t : trials) os << ' ' << t.records[i].duration();
    os << "\n";
  }
  return os.str();
}

ComponentFractions component_breakdown(std::span<const FitTimers> timers) {
  double eval = 0.0, solve = 0.0, total = 0.0;
  for (const auto& t : timers) {
    eval += t.model_eval_seconds;
    solve += t.linear_solve_seconds;
    total += t.total_seconds;
  }
  if (!(total > 0.0)) throw Error(Errc::degenerate_timing, "total fit time is zero");
  ComponentFractions f;
  f.model_eval = std::clamp(eval / total, 0.0, 1.0);
  f.linear_solve = std::clamp(solve / total, 0.0, 1.0 - f.model_eval);
  f.other = 1.0 - f.model_eval - f.linear_solve;
  return f;
}

ComponentFractions component_breakdown(std::span<const FitResult> results) {
  std::vector<FitTimers> timers;
  timers.reserve(results.size());
  for (const auto& r : results) timers.push_back(r.timers);
  return component_breakdown(timers);
}

std::string to_json(const TrialSet& t) {
  nlohmann::ordered_json j;
  j["mode"] = t.mode;
  j["trials_s"] = t.trials;
  j["mean_s"] = t.mean;
  j["stddev_s"] = t.stddev;
  j["stddev_defined"] = t.stddev_defined;
  if (t.failure) j["failure"] = *t.failure;
  return j.dump(2) + "\n";
}

std::string to_json(const ScalingAnalysis& s) {
  nlohmann::ordered_json j;
  j["total_work_s"] = s.total_work;
  j["max_task_s"] = s.max_task;
  j["workers"] = s.workers;
  j["tasks"] = s.tasks;
  j["even_split_s"] = s.even_split;
  j["lower_bound_makespan_s"] = s.lower_bound_makespan;
  j["ideal_speedup"] = s.ideal_speedup;
  if (s.observed_makespan) j["observed_makespan_s"] = *s.observed_makespan;
  if (s.overhead) j["overhead_s"] = *s.overhead;
  return j.dump(2) + "\n";
}

}  // namespace chordfit::bench

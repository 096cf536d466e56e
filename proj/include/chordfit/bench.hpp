#pragma once

// Serial-vs-parallel benchmarking and strong-scaling arithmetic.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "chordfit/dispatch.hpp"
#include "chordfit/lmfit.hpp"

namespace chordfit::bench {

struct TrialSet {
  std::string mode;
  std::vector<double> trials;  // wall seconds
  double mean = 0.0;
  double stddev = 0.0;          // sample standard deviation
  bool stddev_defined = false;  // false with a single trial (stddev reported as 0)
  std::optional<std::string> failure;  // set when a trial threw; trials holds the completed ones
};

/// Mean and sample standard deviation over the given wall times.
TrialSet summarize(std::string mode, std::vector<double> trials);

/// Runs runner `trials` times back to back, timing each on a monotonic clock.
TrialSet benchmark(const std::function<void()>& runner, std::size_t trials, std::string mode = "run");

/// t_serial / t_parallel. Throws Errc::domain unless both are positive.
double speedup(double t_serial, double t_parallel);

struct ScalingAnalysis {
  double total_work = 0.0;
  double max_task = 0.0;
  std::size_t workers = 0;
  std::size_t tasks = 0;
  double even_split = 0.0;  // total_work / workers, ignoring the longest task
  double lower_bound_makespan = 0.0;
  double ideal_speedup = 0.0;
  std::optional<double> observed_makespan;
  std::optional<double> overhead;  // observed - lower bound
};

ScalingAnalysis scaling_bounds(std::span<const double> durations, std::size_t workers,
                               std::optional<double> observed_makespan = std::nullopt);

/// Same analysis from aggregate numbers when per-task durations are not available.
ScalingAnalysis scaling_bounds_from_totals(double total_work, double max_task, std::size_t workers,
                                           std::size_t tasks,
                                           std::optional<double> observed_makespan = std::nullopt);

/// One CSV row per chord: index then its duration in each trial.
std::string per_chord_table(std::span<const dispatch::RunReport> trials);

/// Whitespace-separated columns with a '#' header, suitable for gnuplot.
std::string per_chord_gnuplot(std::span<const dispatch::RunReport> trials);

struct ComponentFractions {
  double model_eval = 0.0;
  double linear_solve = 0.0;
  double other = 0.0;
};

ComponentFractions component_breakdown(std::span<const FitTimers> timers);
ComponentFractions component_breakdown(std::span<const FitResult> results);

std::string to_json(const TrialSet& t);
std::string to_json(const ScalingAnalysis& s);

}  // namespace chordfit::bench

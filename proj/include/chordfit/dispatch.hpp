#pragma once

// Chord-parallel execution under a job-array style resource model.
//
// Tasks sit in one FIFO queue; each of effective_concurrency() workers pulls
// the next task whenever it goes idle. The same pull rule drives the
// event-driven simulator, so measured runs can be checked against it.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "chordfit/lmfit.hpp"

namespace chordfit::dispatch {

enum class ExecMode { in_process, subprocess, simulate };

std::string_view to_string(ExecMode m);

struct ClusterConfig {
  std::size_t nodes = 1;
  std::size_t cores_per_node = 1;
  std::uint64_t mem_per_core = 1ULL << 30;
  std::uint64_t mem_per_task = 1ULL << 30;
  double poll_interval = 2.0;  // seconds; subprocess mode only
  ExecMode mode = ExecMode::in_process;
  // Binary run as "<exe> fit --in chord_<k>.in --out fit_<k>.out" in subprocess mode.
  std::filesystem::path worker_executable;

  void validate() const;
};

/// "1G", "512M", "64K", "1T" (binary multiples) or a plain byte count.
std::uint64_t parse_bytes(std::string_view text);
/// Inverse of parse_bytes using the largest exact suffix.
std::string format_bytes(std::uint64_t bytes);

/// Simultaneous tasks one node can hold: min(cores, floor(node memory / task memory)).
std::size_t per_node_concurrency(const ClusterConfig& config);
/// Sum of per_node_concurrency over all nodes. Throws Errc::unschedulable when
/// one task does not fit in a node.
std::size_t effective_concurrency(const ClusterConfig& config);

struct ChordTask {
  std::size_t index = 0;  // 1-based array index
  std::filesystem::path input;
  std::filesystem::path output;
  double sim_duration = 0.0;  // seconds of injected delay (dilated and simulate modes)
};

/// Tasks for chord_1.in .. chord_<n>.in in dir, outputs fit_<k>.out alongside.
/// sim_duration is taken from each chord's DILATE value.
std::vector<ChordTask> discover_tasks(const std::filesystem::path& dir);

struct WorkerId {
  std::size_t node = 0;
  std::size_t core = 0;
  friend bool operator==(const WorkerId&, const WorkerId&) = default;
};

enum class TaskStatus { ok, failed };

struct TaskRecord {
  std::size_t index = 0;
  WorkerId worker;
  double submit = 0.0;  // seconds since run start, monotonic clock
  double start = 0.0;
  double end = 0.0;
  TaskStatus status = TaskStatus::ok;
  std::string error;

  double duration() const noexcept { return end - start; }
};

struct RunReport {
  ExecMode mode = ExecMode::in_process;
  bool serial = false;
  std::vector<TaskRecord> records;  // ordered by task index
  double makespan = 0.0;       // subprocess mode: to the poll that saw no live task
  double join_makespan = 0.0;  // to the last observed task end
  std::size_t concurrency_limit = 0;
  std::size_t n_polls = 0;

  bool any_failed() const;
  std::vector<double> durations() const;
};

/// Runs one task; throws on failure.
using FitRunner = std::function<void(const ChordTask&)>;

/// Fits the task's chord file, then sleeps for sim_duration.
FitRunner fit_runner(FitOptions options = {});

RunReport run_serial(std::span<const ChordTask> tasks, const FitRunner& runner);

/// in_process: threads pull from the queue and call runner.
/// subprocess: each task is a child process of config.worker_executable;
///   completion is observed by polling every poll_interval seconds.
/// simulate: nothing executes; records come from simulate() on sim_duration.
RunReport run_parallel(std::span<const ChordTask> tasks, const ClusterConfig& config,
                       const FitRunner& runner);

enum class Policy { greedy_fifo, static_round_robin };

struct Assignment {
  std::size_t worker = 0;
  double start = 0.0;
};

struct SimulationResult {
  double makespan = 0.0;
  std::vector<Assignment> assignment;  // per task, input order
};

/// Event-driven replay of the pull rule. Ties in worker availability go to the
/// lowest worker id. static_round_robin pins task j to worker j mod workers.
SimulationResult simulate(std::span<const double> durations, std::size_t workers,
                          Policy policy = Policy::greedy_fifo);

/// Largest number of records whose [start, end) intervals overlap.
std::size_t peak_concurrency(std::span<const TaskRecord> records);

std::string emit_batch_script(std::size_t n_tasks, const ClusterConfig& config,
                              std::string_view partition = "gpus");

std::string report_to_json(const RunReport& report);

}  // namespace chordfit::dispatch

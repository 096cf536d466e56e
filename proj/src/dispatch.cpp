#include "chordfit/dispatch.hpp"

#include <spawn.h>
#include <sys/wait.h>
#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <map>
#include <mutex>
#include <queue>
#include <thread>

#include <json.hpp>

#include "chordfit/chordio.hpp"
#include "chordfit/error.hpp"
#include "chordfit/pipeline.hpp"

extern char** environ;

namespace chordfit::dispatch {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double>(b - a).count();
}

WorkerId worker_id(std::size_t w, std::size_t per_node) { return {w / per_node, w % per_node}; }

RunReport run_in_process(std::span<const ChordTask> tasks, std::size_t workers, std::size_t per_node,
                         const FitRunner& runner) {
  RunReport report;
  report.mode = ExecMode::in_process;
  report.concurrency_limit = workers;
  report.records.resize(tasks.size());

  std::atomic<std::size_t> next{0};
  const auto t0 = Clock::now();
  auto work = [&](std::size_t w) {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      TaskRecord& rec = report.records[i];
      rec.index = tasks[i].index;
      rec.worker = worker_id(w, per_node);
      rec.submit = 0.0;
      rec.start = seconds_between(t0, Clock::now());
      try {
        runner(tasks[i]);
        rec.status = TaskStatus::ok;
      } catch (const std::exception& e) {
        rec.status = TaskStatus::failed;
        rec.error = e.what();
      } catch (...) {
        rec.status = TaskStatus::failed;
        rec.error = "unknown exception";
      }
      rec.end = seconds_between(t0, Clock::now());
    }
  };
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
  }
  for (const auto& r : report.records) report.join_makespan = std::max(report.join_makespan, r.end);
  report.makespan = report.join_makespan;
  return report;
}

pid_t spawn_worker(const fs::path& exe, const ChordTask& task) {
  std::vector<std::string> args = {exe.string(), "fit", "--in", task.input.string(), "--out",
                                   task.output.string()};
  if (task.sim_duration > 0.0) {
    args.push_back("--dilate");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", task.sim_duration);
    args.emplace_back(buf);
  }
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_addopen(&actions, STDOUT_FILENO, "/dev/null", O_WRONLY, 0);
  pid_t pid = -1;
  const int rc = posix_spawn(&pid, exe.c_str(), &actions, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  if (rc != 0) return -1;
  return pid;
}

RunReport run_subprocess(std::span<const ChordTask> tasks, const ClusterConfig& config,
                         std::size_t workers, std::size_t per_node) {
  if (config.worker_executable.empty()) {
    throw Error(Errc::domain, "subprocess mode needs a worker executable");
  }
  RunReport report;
  report.mode = ExecMode::subprocess;
  report.concurrency_limit = workers;
  report.records.resize(tasks.size());

  std::mutex mu;
  std::condition_variable cv;
  std::size_t live = 0;
  bool all_done = false;

  const auto t0 = Clock::now();
  const auto poll = std::chrono::duration_cast<Clock::duration>(
      std::chrono::duration<double>(config.poll_interval));

  // Wrapper-style completion tracking: query every poll interval and stop the
  // clock at the first query that finds nothing left running.
  std::jthread poller([&] {
    std::unique_lock lock(mu);
    for (std::size_t k = 0;; ++k) {
      cv.wait_until(lock, t0 + poll * static_cast<long>(k), [] { return false; });
      ++report.n_polls;
      if (all_done && live == 0) {
        report.makespan = seconds_between(t0, Clock::now());
        return;
      }
    }
  });

  std::vector<std::size_t> free_workers(workers);
  for (std::size_t w = 0; w < workers; ++w) free_workers[w] = workers - 1 - w;
  std::map<pid_t, std::pair<std::size_t, std::size_t>> running;  // pid -> (task slot, worker)
  std::size_t next = 0;

  auto launch = [&] {
    while (next < tasks.size() && !free_workers.empty()) {
      const std::size_t w = free_workers.back();
      free_workers.pop_back();
      TaskRecord& rec = report.records[next];
      rec.index = tasks[next].index;
      rec.worker = worker_id(w, per_node);
      rec.submit = 0.0;
      rec.start = seconds_between(t0, Clock::now());
      const pid_t pid = spawn_worker(config.worker_executable, tasks[next]);
      if (pid < 0) {
        rec.end = rec.start;
        rec.status = TaskStatus::failed;
        rec.error = "spawn failed";
        free_workers.push_back(w);
      } else {
        std::lock_guard lock(mu);
        ++live;
        running.emplace(pid, std::make_pair(next, w));
      }
      ++next;
    }
  };

  launch();
  while (!running.empty()) {
    int status = 0;
    pid_t pid = -1;
    do {
      pid = ::waitpid(-1, &status, 0);
    } while (pid < 0 && errno == EINTR);
    if (pid < 0) {
      {
        std::lock_guard lock(mu);
        all_done = true;
        live = 0;
      }
      poller.join();
      throw Error(Errc::io, "waitpid failed");
    }
    auto it = running.find(pid);
    if (it == running.end()) continue;
    const auto [slot, w] = it->second;
    running.erase(it);
    TaskRecord& rec = report.records[slot];
    rec.end = seconds_between(t0, Clock::now());
    if (WIFEXITED(status) && WEXITSTATUS(status) == 0) {
      rec.status = TaskStatus::ok;
    } else {
      rec.status = TaskStatus::failed;
      rec.error = WIFEXITED(status) ? "exit status " + std::to_string(WEXITSTATUS(status))
                                    : "terminated by signal";
    }
    free_workers.push_back(w);
    {
      std::lock_guard lock(mu);
      --live;
    }
    launch();
  }
  {
    std::lock_guard lock(mu);
    all_done = true;
  }
  poller.join();
  for (const auto& r : report.records) report.join_makespan = std::max(report.join_makespan, r.end);
  return report;
}

}  // namespace

std::string_view to_string(ExecMode m) {
  switch (m) {
    case ExecMode::in_process: return "in_process";
    case ExecMode::subprocess: return "subprocess";
    case ExecMode::simulate: return "simulate";
  }
  return "in_process";
}

void ClusterConfig::validate() const {
  if (nodes < 1 || cores_per_node < 1 || mem_per_core < 1 || mem_per_task < 1) {
    throw Error(Errc::domain, "cluster counts and memory sizes must be >= 1");
  }
  if (!(poll_interval > 0.0) || !std::isfinite(poll_interval)) {
    throw Error(Errc::domain, "poll interval must be positive");
  }
}

std::uint64_t parse_bytes(std::string_view text) {
  if (text.empty()) throw Error(Errc::domain, "empty memory size");
  std::uint64_t mult = 1;
  switch (text.back()) {
    case 'K': case 'k': mult = 1ULL << 10; break;
    case 'M': case 'm': mult = 1ULL << 20; break;
    case 'G': case 'g': mult = 1ULL << 30; break;
    case 'T': case 't': mult = 1ULL << 40; break;
    default: break;
  }
  if (mult != 1) text.remove_suffix(1);
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || v == 0) {
    throw Error(Errc::domain, "bad memory size '" + std::string(text) + "'");
  }
  return v * mult;
}

std::string format_bytes(std::uint64_t bytes) {
  static constexpr std::pair<char, int> kUnits[] = {{'T', 40}, {'G', 30}, {'M', 20}, {'K', 10}};
  for (auto [suffix, shift] : kUnits) {
    const std::uint64_t unit = 1ULL << shift;
    if (bytes >= unit && bytes % unit == 0) return std::to_string(bytes / unit) + suffix;
  }
  return std::to_string(bytes);
}

std::size_t per_node_concurrency(const ClusterConfig& config) {
  config.validate();
  const std::uint64_t node_memory = config.cores_per_node * config.mem_per_core;
  if (config.mem_per_task > node_memory) {
    throw Error(Errc::unschedulable, "task memory " + format_bytes(config.mem_per_task) +
                                         " exceeds node memory " + format_bytes(node_memory));
  }
  return std::min<std::size_t>(config.cores_per_node, node_memory / config.mem_per_task);
}

std::size_t effective_concurrency(const ClusterConfig& config) {
  return config.nodes * per_node_concurrency(config);
}

std::vector<ChordTask> discover_tasks(const fs::path& dir) {
  std::vector<ChordTask> tasks;
  for (std::size_t k = 1;; ++k) {
    const fs::path in = dir / chordio::chord_input_name(k);
    if (!fs::exists(in)) break;
    ChordTask t;
    t.index = k;
    t.input = in;
    t.output = dir / chordio::fit_output_name(k);
    const auto discharge = chordio::parse_discharge(chordio::read_file(in));
    for (const auto& c : discharge.chords) t.sim_duration += c.dilate_seconds;
    tasks.push_back(std::move(t));
  }
  return tasks;
}

bool RunReport::any_failed() const {
  return std::any_of(records.begin(), records.end(),
                     [](const TaskRecord& r) { return r.status == TaskStatus::failed; });
}

std::vector<double> RunReport::durations() const {
  std::vector<double> d;
  d.reserve(records.size());
  for (const auto& r : records) d.push_back(r.duration());
  return d;
}

FitRunner fit_runner(FitOptions options) {
  return [options](const ChordTask& task) {
    fit_chord_file(task.input, task.output, options);
    if (task.sim_duration > 0.0) {
      std::this_thread::sleep_for(std::chrono::duration<double>(task.sim_duration));
    }
  };
}

RunReport run_serial(std::span<const ChordTask> tasks, const FitRunner& runner) {
  RunReport report = run_in_process(tasks, 1, 1, runner);
  report.serial = true;
  return report;
}

RunReport run_parallel(std::span<const ChordTask> tasks, const ClusterConfig& config,
                       const FitRunner& runner) {
  const std::size_t workers = effective_concurrency(config);
  const std::size_t per_node = per_node_concurrency(config);
  switch (config.mode) {
    case ExecMode::in_process:
      return run_in_process(tasks, workers, per_node, runner);
    case ExecMode::subprocess:
      return run_subprocess(tasks, config, workers, per_node);
    case ExecMode::simulate: {
      std::vector<double> d;
      for (const auto& t : tasks) d.push_back(t.sim_duration);
      const SimulationResult sim = simulate(d, workers);
      RunReport report;
      report.mode = ExecMode::simulate;
      report.concurrency_limit = workers;
      for (std::size_t i = 0; i < tasks.size(); ++i) {
        TaskRecord r;
        r.index = tasks[i].index;
        r.worker = worker_id(sim.assignment[i].worker, per_node);
        r.start = sim.assignment[i].start;
        r.end = r.start + d[i];
        report.records.push_back(r);
      }
      report.makespan = report.join_makespan = sim.makespan;
      return report;
    }
  }
  throw Error(Errc::domain, "unknown execution mode");
}

SimulationResult simulate(std::span<const double> durations, std::size_t workers, Policy policy) {
  if (workers < 1) throw Error(Errc::domain, "simulate needs at least one worker");
  for (double d : durations) {
    if (!std::isfinite(d) || d < 0.0) throw Error(Errc::domain, "durations must be finite and >= 0");
  }
  SimulationResult out;
  out.assignment.resize(durations.size());
  if (policy == Policy::static_round_robin) {
    std::vector<double> busy_until(workers, 0.0);
    for (std::size_t j = 0; j < durations.size(); ++j) {
      const std::size_t w = j % workers;
      out.assignment[j] = {w, busy_until[w]};
      busy_until[w] += durations[j];
      out.makespan = std::max(out.makespan, busy_until[w]);
    }
    return out;
  }
  using Slot = std::pair<double, std::size_t>;  // (free at, worker id)
  std::priority_queue<Slot, std::vector<Slot>, std::greater<>> idle;
  for (std::size_t w = 0; w < workers; ++w) idle.push({0.0, w});
  for (std::size_t j = 0; j < durations.size(); ++j) {
    auto [free_at, w] = idle.top();
    idle.pop();
    out.assignment[j] = {w, free_at};
    const double end = free_at + durations[j];
    out.makespan = std::max(out.makespan, end);
    idle.push({end, w});
  }
  return out;
}

std::size_t peak_concurrency(std::span<const TaskRecord> records) {
  std::vector<std::pair<double, int>> events;
  events.reserve(2 * records.size());
  for (const auto& r : records) {
    events.push_back({r.start, +1});
    events.push_back({r.end, -1});
  }
  // At equal times ends sort first, so back-to-back tasks do not overlap.
  std::sort(events.begin(), events.end());
  std::size_t peak = 0;
  long current = 0;
  for (const auto& [t, delta] : events) {
    current += delta;
    peak = std::max(peak, static_cast<std::size_t>(std::max(current, 0L)));
  }
  return peak;
}

std::string emit_batch_script(std::size_t n_tasks, const ClusterConfig& config,
                              std::string_view partition) {
  if (n_tasks < 1) throw Error(Errc::domain, "batch script needs at least one task");
  std::string s;
  s += "#!/bin/bash\n";
  s += "#SBATCH -p " + std::string(partition) + "\n";
  s += "#SBATCH --array=1-" + std::to_string(n_tasks) + "\n";
  s += "#SBATCH --cpus-per-task=1\n";
  s += "#SBATCH -n 1\n";
  s += "#SBATCH --ntasks-per-node=" + std::to_string(config.cores_per_node) + "\n";
  s += "#SBATCH --mem-per-cpu=" + format_bytes(config.mem_per_task) + "\n";
  s += "\n";
  s += "srun time cerfit < chord $SLURM_ARRAY_TASK_ID.in \\\n";
  s += ">& fit_$SLURM_ARRAY_TASK_ID.out\n";
  return s;
}

std::string report_to_json(const RunReport& report) {
  nlohmann::ordered_json j;
  j["mode"] = report.serial ? "serial" : std::string(to_string(report.mode));
  j["makespan_s"] = report.makespan;
  j["join_makespan_s"] = report.join_makespan;
  j["concurrency_limit"] = report.concurrency_limit;
  j["n_polls"] = report.n_polls;
  auto tasks = nlohmann::ordered_json::array();
  for (const auto& r : report.records) {
    nlohmann::ordered_json t;
    t["k"] = r.index;
    t["worker"] = {{"node", r.worker.node}, {"core", r.worker.core}};
    t["submit_s"] = r.submit;
    t["start_s"] = r.start;
    t["end_s"] = r.end;
    t["status"] = r.status == TaskStatus::ok ? "ok" : "failed";
    if (!r.error.empty()) t["error"] = r.error;
    tasks.push_back(std::move(t));
  }
  j["tasks"] = std::move(tasks);
  return j.dump(2) + "\n";
}

}  // namespace chordfit::dispatch

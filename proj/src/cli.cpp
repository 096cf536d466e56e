#include "chordfit/cli.hpp"

#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <ostream>
#include <random>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "chordfit/bench.hpp"
#include "chordfit/chordio.hpp"
#include "chordfit/error.hpp"
#include "chordfit/pipeline.hpp"

namespace chordfit::cli {

namespace fs = std::filesystem;

namespace {

// Round placeholder line: nm, eV (roughly a light ion), no instrument width.
constexpr double kGenLambda0 = 500.0;
constexpr double kGenIonRest = 1e10;
constexpr double kGenHalfWindow = 1.5;  // nm either side of lambda0
constexpr double kGenFrameRate = 200.0;  // Hz

struct ClusterFlags {
  std::size_t nodes = 1;
  std::size_t cores = 1;
  std::string mem_per_core = "1G";
  std::string mem_per_task = "1G";
  double poll = 2.0;
  std::string exec = "in_process";

  void attach(CLI::App* app, bool with_exec) {
    app->add_option("--nodes", nodes, "Node count")->check(CLI::PositiveNumber);
    app->add_option("--cores", cores, "Cores per node")->check(CLI::PositiveNumber);
    app->add_option("--mem-per-core", mem_per_core, "Memory per core (e.g. 1G)");
    app->add_option("--mem-per-task", mem_per_task, "Memory requested per task (e.g. 1G)");
    if (with_exec) {
      app->add_option("--poll", poll, "Completion poll interval in seconds (subprocess mode)")
          ->check(CLI::PositiveNumber);
      app->add_option("--exec", exec, "Execution mode")
          ->check(CLI::IsMember({"in_process", "subprocess", "simulate"}));
    }
  }

  dispatch::ClusterConfig build() const {
    dispatch::ClusterConfig c;
    c.nodes = nodes;
    c.cores_per_node = cores;
    c.mem_per_core = dispatch::parse_bytes(mem_per_core);
    c.mem_per_task = dispatch::parse_bytes(mem_per_task);
    c.poll_interval = poll;
    c.mode = exec == "subprocess" ? dispatch::ExecMode::subprocess
             : exec == "simulate" ? dispatch::ExecMode::simulate
                                  : dispatch::ExecMode::in_process;
    c.worker_executable = fs::read_symlink("/proc/self/exe");
    c.validate();
    return c;
  }
};

fs::path default_out(const fs::path& given) {
  if (!given.empty()) return given;
  if (const char* root = std::getenv(kWorkdirEnv); root && *root) return root;
  return "work";
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::io, "cannot create " + dir.string() + ": " + ec.message());
}

std::string chord_label(std::size_t i, std::size_t n) {
  const std::size_t tangential = (n + 1) / 2;
  char buf[16];
  if (i < tangential) std::snprintf(buf, sizeof buf, "T%02zu", i + 1);
  else std::snprintf(buf, sizeof buf, "V%02zu", i - tangential + 1);
  return buf;
}

std::string generate_discharge(const GenArgs& a) {
  std::mt19937_64 rng(a.seed);
  std::uniform_real_distribution<double> amp(500.0, 3000.0);
  std::uniform_real_distribution<double> vel(-1.0e5, 1.0e5);  // m/s
  std::uniform_real_distribution<double> temp(100.0, 3000.0);  // eV
  std::uniform_real_distribution<double> base(20.0, 100.0);
  std::uniform_real_distribution<double> dilate(a.dilate_min, a.dilate_max);

  std::string text = chordio::format_header(a.shot, "synthetic discharge, seed " + std::to_string(a.seed));
  const std::size_t n_slices = a.timeslices * a.scale;
  for (std::size_t c = 0; c < a.chords; ++c) {
    chordio::ChordBlock block;
    block.chord_id = chord_label(c, a.chords);
    block.line_ref = {kGenLambda0, kGenIonRest, 0.0};
    block.n_lines = a.lines;
    if (a.dilate_max > 0.0) block.dilate_seconds = dilate(rng);
    for (std::size_t s = 0; s < n_slices; ++s) {
      chordio::GenRecipe g;
      g.truth.baseline = {base(rng)};
      for (std::size_t k = 0; k < a.lines; ++k) {
        // Extra components sit on the wings so they remain separable.
        const double offset = k == 0 ? 0.0 : (k % 2 ? 1.0 : -1.0) * 0.4 * static_cast<double>((k + 1) / 2);
        const double mu = kGenLambda0 * (1.0 + vel(rng) / kSpeedOfLight) + offset;
        const double sigma = kGenLambda0 * std::sqrt(temp(rng) / kGenIonRest);
        g.truth.lines.push_back({amp(rng) / static_cast<double>(k + 1), mu, sigma});
      }
      g.noise = a.noise == "none" ? NoiseKind::none : NoiseKind::sqrt_gaussian;
      g.seed = rng();
      g.grid_min = kGenLambda0 - kGenHalfWindow;
      g.grid_max = kGenLambda0 + kGenHalfWindow;
      g.npix = a.npix;
      block.timeslices.push_back({1.0 + static_cast<double>(s) / kGenFrameRate, g});
    }
    text += chordio::format_stanza(block);
  }
  return text;
}

std::size_t count_failed_records(std::span<const dispatch::ChordTask> tasks) {
  std::size_t failed = 0;
  for (const auto& t : tasks) {
    if (!fs::exists(t.output)) continue;
    for (const auto& r : chordio::parse_fit_output(chordio::read_file(t.output))) failed += r.failed();
  }
  return failed;
}

// Split a discharge file into out, or take an existing chord directory and
// redirect its outputs into out.
std::vector<dispatch::ChordTask> prepare_tasks(const fs::path& in, const fs::path& out) {
  ensure_dir(out);
  if (fs::is_directory(in)) {
    auto tasks = dispatch::discover_tasks(in);
    for (auto& t : tasks) t.output = out / chordio::fit_output_name(t.index);
    if (tasks.empty()) throw Error(Errc::empty_input, "no chord_<k>.in files in " + in.string());
    return tasks;
  }
  chordio::split_chords(chordio::parse_discharge(chordio::read_file(in)), out);
  return dispatch::discover_tasks(out);
}

int exec_gen(const GenArgs& a, std::ostream& out) {
  const fs::path dir = default_out(a.out);
  ensure_dir(dir);
  const fs::path path = dir / "discharge.in";
  chordio::write_file(path, generate_discharge(a));
  out << "wrote " << path.string() << " (" << a.chords << " chords x " << a.timeslices * a.scale
      << " timeslices)\n";
  return 0;
}

int exec_split(const SplitArgs& a, std::ostream& out) {
  const fs::path dir = default_out(a.out);
  const auto paths = chordio::split_chords(chordio::parse_discharge(chordio::read_file(a.in)), dir);
  out << "wrote " << paths.size() << " chord files to " << dir.string() << "\n";
  return 0;
}

int exec_fit(const FitArgs& a, std::ostream& out) {
  const std::size_t failed = fit_chord_file(a.in, a.out);
  if (a.dilate > 0.0) std::this_thread::sleep_for(std::chrono::duration<double>(a.dilate));
  out << "wrote " << a.out.string() << (failed ? " with " + std::to_string(failed) + " failed fits" : "")
      << "\n";
  return failed ? 1 : 0;
}

int exec_run(const RunArgs& a, std::ostream& out, std::ostream& err) {
  const fs::path dir = default_out(a.out);
  const auto tasks = prepare_tasks(a.in, dir);
  const dispatch::RunReport report = a.serial ? dispatch::run_serial(tasks, dispatch::fit_runner())
                                              : dispatch::run_parallel(tasks, a.cluster, dispatch::fit_runner());
  chordio::write_file(dir / "run_report.json", dispatch::report_to_json(report));
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s run: %zu tasks, concurrency %zu, makespan %.3f s (join %.3f s)\n",
                a.serial ? "serial" : std::string(dispatch::to_string(a.cluster.mode)).c_str(),
                tasks.size(), report.concurrency_limit, report.makespan, report.join_makespan);
  out << buf;
  if (a.cluster.mode == dispatch::ExecMode::simulate && !a.serial) return 0;
  const std::size_t failed_records = count_failed_records(tasks);
  if (report.any_failed() || failed_records > 0) {
    for (const auto& r : report.records) {
      if (r.status == dispatch::TaskStatus::failed) err << "task " << r.index << " failed: " << r.error << "\n";
    }
    if (failed_records) err << failed_records << " timeslice fits failed\n";
    return 1;
  }
  return 0;
}

int exec_certest(const CertestArgs& a, std::ostream& out) {
  if (a.action == CertestArgs::Action::generate) {
    const std::size_t n = certest::generate_reference(a.run_dir, a.reference, a.overwrite);
    out << "stored " << n << " reference files in " << a.reference.string() << "\n";
    return 0;
  }
  const certest::CertestReport report = certest::compare(a.reference, a.test, a.tol);
  const fs::path dir = default_out(a.out);
  ensure_dir(dir);
  chordio::write_file(dir / "certest_report.json", certest::report_to_json(report));
  out << certest::report_to_table(report);
  return report.pass ? 0 : 1;
}

int exec_bench(const BenchArgs& a, std::ostream& out) {
  const std::size_t workers = dispatch::effective_concurrency(a.cluster);
  char buf[256];
  if (a.action == BenchArgs::Action::replay) {
    const double s = bench::speedup(a.serial_s, a.parallel_s);
    std::snprintf(buf, sizeof buf, "speedup %.1f (%.6g / %.6g = %.6g)\n", s, a.serial_s, a.parallel_s, s);
    out << buf;
    if (a.max_task) {
      const auto sa = bench::scaling_bounds_from_totals(a.total_work.value_or(a.serial_s), *a.max_task,
                                                        workers, a.tasks, a.parallel_s);
      std::snprintf(buf, sizeof buf,
                    "workers %zu: even split %.4g s, lower bound %.4g s, ideal speedup %.4g, overhead %.4g s\n",
                    workers, sa.even_split, sa.lower_bound_makespan, sa.ideal_speedup, *sa.overhead);
      out << buf;
    }
    return 0;
  }

  const fs::path dir = default_out(a.out);
  const auto tasks = prepare_tasks(a.in, dir);
  std::vector<dispatch::RunReport> serial_runs, parallel_runs;
  const auto runner = dispatch::fit_runner();
  const bench::TrialSet serial = bench::benchmark(
      [&] { serial_runs.push_back(dispatch::run_serial(tasks, runner)); }, a.trials, "serial");
  const bench::TrialSet parallel = bench::benchmark(
      [&] { parallel_runs.push_back(dispatch::run_parallel(tasks, a.cluster, runner)); }, a.trials,
      std::string(dispatch::to_string(a.cluster.mode)));

  std::vector<double> mean_durations(tasks.size(), 0.0);
  for (const auto& r : serial_runs) {
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      mean_durations[i] += r.records[i].duration() / static_cast<double>(serial_runs.size());
    }
  }
  const auto scaling = bench::scaling_bounds(mean_durations, workers, parallel.mean);

  std::vector<FitResult> fits;
  for (const auto& t : tasks) {
    for (const auto& c : chordio::parse_discharge(chordio::read_file(t.input)).chords) {
      auto outcome = fit_chord(c);
      for (auto& f : outcome.fits) fits.push_back(std::move(f));
    }
  }
  const auto parts = bench::component_breakdown(fits);

  nlohmann::ordered_json j;
  j["serial"] = nlohmann::json::parse(bench::to_json(serial));
  j["parallel"] = nlohmann::json::parse(bench::to_json(parallel));
  std::vector<double> join, polled;
  for (const auto& r : parallel_runs) {
    join.push_back(r.join_makespan);
    polled.push_back(r.makespan);
  }
  j["parallel_join_makespan_s"] = join;
  j["parallel_polled_makespan_s"] = polled;
  j["speedup"] = bench::speedup(serial.mean, parallel.mean);
  j["scaling"] = nlohmann::json::parse(bench::to_json(scaling));
  j["components"] = {{"model_eval", parts.model_eval}, {"linear_solve", parts.linear_solve}, {"other", parts.other}};
  chordio::write_file(dir / "bench.json", j.dump(2) + "\n");
  chordio::write_file(dir / "bench.csv", bench::per_chord_table(serial_runs));
  chordio::write_file(dir / "bench.dat", bench::per_chord_gnuplot(serial_runs));

  std::snprintf(buf, sizeof buf,
                "serial mean %.4g s, parallel mean %.4g s, speedup %.3g (ideal %.3g on %zu workers)\n",
                serial.mean, parallel.mean, bench::speedup(serial.mean, parallel.mean), scaling.ideal_speedup,
                workers);
  out << buf;
  if (serial.failure || parallel.failure) return 1;
  return 0;
}

int exec_simulate(const SimulateArgs& a, std::ostream& out) {
  const auto sim = dispatch::simulate(a.durations, a.workers, a.policy);
  char buf[128];
  std::snprintf(buf, sizeof buf, "makespan %.9g\n", sim.makespan);
  out << buf;
  for (std::size_t j = 0; j < sim.assignment.size(); ++j) {
    std::snprintf(buf, sizeof buf, "task %zu worker %zu start %.9g\n", j + 1, sim.assignment[j].worker,
                  sim.assignment[j].start);
    out << buf;
  }
  return 0;
}

int exec_script(const ScriptArgs& a, std::ostream& out) {
  const std::string text = dispatch::emit_batch_script(a.tasks, a.cluster, a.partition);
  const fs::path dir = default_out(a.out);
  ensure_dir(dir);
  chordio::write_file(dir / "batch.sh", text);
  out << text;
  return 0;
}

std::vector<char*> c_argv(std::vector<std::string>& storage) {
  std::vector<char*> v;
  for (auto& s : storage) v.push_back(s.data());
  return v;
}

}  // namespace

Command parse_args(const std::vector<std::string>& argv_in) {
  if (argv_in.empty()) throw Error(Errc::usage, "empty argument vector");
  CLI::App app{"Chord-parallel spectral line fitting pipeline", "chordfit"};
  app.require_subcommand(1, 1);
  app.set_config("--config", "", "key=value configuration file");

  GenArgs gen;
  SplitArgs split;
  FitArgs fit;
  RunArgs run;
  CertestArgs cert;
  BenchArgs bench;
  SimulateArgs sim;
  ScriptArgs script;
  ClusterFlags run_cluster, bench_cluster, script_cluster;
  std::string cert_action, bench_action, policy = "fifo";
  std::vector<std::string> field_tols;
  bench_cluster.nodes = 2;
  bench_cluster.cores = 24;
  script_cluster.cores = 24;

  auto* g = app.add_subcommand("gen", "Generate a synthetic discharge file");
  g->add_option("--chords", gen.chords, "Chord count")->check(CLI::PositiveNumber);
  g->add_option("--timeslices", gen.timeslices, "Timeslices per chord")->check(CLI::PositiveNumber);
  g->add_option("--scale", gen.scale, "Multiplier on timeslices")->check(CLI::PositiveNumber);
  g->add_option("--npix", gen.npix, "Pixels per spectrum")->check(CLI::Range(8, 100000));
  g->add_option("--lines", gen.lines, "Gaussian components per spectrum")->check(CLI::Range(1, 4));
  g->add_option("--seed", gen.seed, "Generator seed");
  g->add_option("--shot", gen.shot, "Discharge number");
  g->add_option("--noise", gen.noise, "Noise model")->check(CLI::IsMember({"none", "sqrt"}));
  g->add_option("--dilate-min", gen.dilate_min, "Minimum injected per-chord delay (s)")->check(CLI::NonNegativeNumber);
  g->add_option("--dilate-max", gen.dilate_max, "Maximum injected per-chord delay (s)")->check(CLI::NonNegativeNumber);
  g->add_option("--out", gen.out, "Output directory");

  auto* sp = app.add_subcommand("split", "Split a discharge file into chord_<k>.in files");
  sp->add_option("--in", split.in, "Discharge file")->required();
  sp->add_option("--out", split.out, "Output directory");

  auto* f = app.add_subcommand("fit", "Fit one chord input file");
  f->add_option("--in", fit.in, "chord_<k>.in file")->required();
  f->add_option("--out", fit.out, "fit_<k>.out file to write")->required();
  f->add_option("--dilate", fit.dilate, "Extra delay after fitting (s)")->check(CLI::NonNegativeNumber);

  auto* r = app.add_subcommand("run", "Fit all chords serially or in parallel");
  r->add_option("--in", run.in, "Discharge file or directory of chord files")->required();
  r->add_option("--out", run.out, "Output directory");
  r->add_flag("--serial", run.serial, "Process chords one after another");
  run_cluster.attach(r, true);

  auto* c = app.add_subcommand("certest", "Store or compare golden reference outputs");
  c->add_option("action", cert_action, "generate | compare")->required()->check(CLI::IsMember({"generate", "compare"}));
  c->add_option("--run-dir", cert.run_dir, "Directory holding fit_<k>.out (generate)");
  c->add_option("--ref", cert.reference, "Reference directory")->required();
  c->add_option("--test", cert.test, "Directory to compare against the reference");
  c->add_flag("--overwrite", cert.overwrite, "Replace an existing reference");
  c->add_option("--rel", cert.tol.defaults.rel, "Relative tolerance")->check(CLI::NonNegativeNumber);
  c->add_option("--abs", cert.tol.defaults.abs, "Absolute tolerance")->check(CLI::NonNegativeNumber);
  c->add_option("--field-tol", field_tols, "Per-field override name=rel[:abs]");
  c->add_option("--out", cert.out, "Directory for certest_report.json");

  auto* b = app.add_subcommand("bench", "Replay published timings or benchmark serial vs parallel");
  b->add_option("action", bench_action, "replay | run")->required()->check(CLI::IsMember({"replay", "run"}));
  b->add_option("--serial", bench.serial_s, "Serial wall time (replay)")->check(CLI::PositiveNumber);
  b->add_option("--parallel", bench.parallel_s, "Parallel wall time (replay)")->check(CLI::PositiveNumber);
  b->add_option("--total", bench.total_work, "Total work in seconds (replay, default --serial)");
  b->add_option("--max-task", bench.max_task, "Longest task in seconds (replay)");
  b->add_option("--tasks", bench.tasks, "Task count (replay)");
  b->add_option("--in", bench.in, "Discharge file or chord directory (run)");
  b->add_option("--trials", bench.trials, "Trials per mode (run)")->check(CLI::PositiveNumber);
  b->add_option("--out", bench.out, "Output directory (run)");
  bench_cluster.attach(b, true);

  auto* s = app.add_subcommand("simulate", "Event-driven makespan prediction");
  s->add_option("--durations", sim.durations, "Comma-separated task durations (s)")->required()->delimiter(',');
  s->add_option("--workers", sim.workers, "Worker count")->required()->check(CLI::PositiveNumber);
  s->add_option("--policy", policy, "fifo | static")->check(CLI::IsMember({"fifo", "static"}));

  auto* sc = app.add_subcommand("script", "Emit the job-array batch script");
  sc->add_option("--tasks", script.tasks, "Array size")->check(CLI::PositiveNumber);
  sc->add_option("--partition", script.partition, "Partition name");
  sc->add_option("--out", script.out, "Output directory");
  script_cluster.attach(sc, false);

  std::vector<std::string> storage = argv_in;
  auto argv = c_argv(storage);
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    Command cmd;
    cmd.help = app.help();
    return cmd;
  } catch (const CLI::CallForAllHelp&) {
    Command cmd;
    cmd.help = app.help("", CLI::AppFormatMode::All);
    return cmd;
  } catch (const CLI::ParseError& e) {
    throw Error(Errc::usage, e.what());
  }

  if (app.get_subcommands().size() != 1) throw Error(Errc::usage, "exactly one subcommand is allowed");
  Command cmd;
  try {
    if (g->parsed()) {
      if (gen.dilate_max < gen.dilate_min) throw Error(Errc::usage, "--dilate-max must be >= --dilate-min");
      cmd.subcommand = Subcommand::gen;
      cmd.args = gen;
    } else if (sp->parsed()) {
      cmd.subcommand = Subcommand::split;
      cmd.args = split;
    } else if (f->parsed()) {
      cmd.subcommand = Subcommand::fit;
      cmd.args = fit;
    } else if (r->parsed()) {
      run.cluster = run_cluster.build();
      cmd.subcommand = Subcommand::run;
      cmd.args = run;
    } else if (c->parsed()) {
      cert.action = cert_action == "generate" ? CertestArgs::Action::generate : CertestArgs::Action::compare;
      if (cert.action == CertestArgs::Action::generate && cert.run_dir.empty()) {
        throw Error(Errc::usage, "certest generate needs --run-dir");
      }
      if (cert.action == CertestArgs::Action::compare && cert.test.empty()) {
        throw Error(Errc::usage, "certest compare needs --test");
      }
      for (const auto& ft : field_tols) {
        const auto eq = ft.find('=');
        if (eq == std::string::npos) throw Error(Errc::usage, "--field-tol expects name=rel[:abs]");
        certest::Tolerance t = cert.tol.defaults;
        const std::string vals = ft.substr(eq + 1);
        const auto colon = vals.find(':');
        t.rel = std::stod(vals.substr(0, colon));
        if (colon != std::string::npos) t.abs = std::stod(vals.substr(colon + 1));
        cert.tol.overrides[ft.substr(0, eq)] = t;
      }
      cert.tol.validate();
      cmd.subcommand = Subcommand::certest;
      cmd.args = cert;
    } else if (b->parsed()) {
      bench.action = bench_action == "run" ? BenchArgs::Action::run : BenchArgs::Action::replay;
      if (bench.action == BenchArgs::Action::replay && (bench.serial_s <= 0.0 || bench.parallel_s <= 0.0)) {
        throw Error(Errc::usage, "bench replay needs --serial and --parallel");
      }
      if (bench.action == BenchArgs::Action::run && bench.in.empty()) {
        throw Error(Errc::usage, "bench run needs --in");
      }
      bench.cluster = bench_cluster.build();
      cmd.subcommand = Subcommand::bench;
      cmd.args = bench;
    } else if (s->parsed()) {
      sim.policy = policy == "static" ? dispatch::Policy::static_round_robin : dispatch::Policy::greedy_fifo;
      cmd.subcommand = Subcommand::simulate;
      cmd.args = sim;
    } else if (sc->parsed()) {
      script.cluster = script_cluster.build();
      cmd.subcommand = Subcommand::script;
      cmd.args = script;
    }
  } catch (const Error& e) {
    if (e.code() == Errc::usage) throw;
    throw Error(Errc::usage, e.what());
  } catch (const std::invalid_argument& e) {
    throw Error(Errc::usage, std::string("bad number: ") + e.what());
  }
  return cmd;
}

int execute(const Command& cmd, std::ostream& out, std::ostream& err) {
  if (cmd.help) {
    out << *cmd.help;
    return 0;
  }
  return std::visit(
      [&](const auto& a) -> int {
        using T = std::decay_t<decltype(a)>;
        if constexpr (std::is_same_v<T, GenArgs>) return exec_gen(a, out);
        else if constexpr (std::is_same_v<T, SplitArgs>) return exec_split(a, out);
        else if constexpr (std::is_same_v<T, FitArgs>) return exec_fit(a, out);
        else if constexpr (std::is_same_v<T, RunArgs>) return exec_run(a, out, err);
        else if constexpr (std::is_same_v<T, CertestArgs>) return exec_certest(a, out);
        else if constexpr (std::is_same_v<T, BenchArgs>) return exec_bench(a, out);
        else if constexpr (std::is_same_v<T, SimulateArgs>) return exec_simulate(a, out);
        else return exec_script(a, out);
      },
      cmd.args);
}

int run_main(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  Command cmd;
  try {
    cmd = parse_args(argv);
  } catch (const Error& e) {
    err << e.what() << "\nRun with --help for usage.\n";
    return 2;
  }
  try {
    return execute(cmd, out, err);
  } catch (const Error& e) {
    err << e.what() << "\n";
    return e.code() == Errc::usage ? 2 : 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace chordfit::cli

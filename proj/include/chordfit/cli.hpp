#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "chordfit/certest.hpp"
#include "chordfit/dispatch.hpp"

namespace chordfit::cli {

/// Environment variable naming the default output root.
inline constexpr const char* kWorkdirEnv = "CHORDFIT_WORKDIR";

enum class Subcommand { gen, split, fit, run, certest, bench, simulate, script };

struct GenArgs {
  std::size_t chords = 64;
  std::size_t timeslices = 5;
  std::size_t scale = 1;  // multiplies timeslices
  std::size_t npix = 100;
  std::size_t lines = 1;
  std::uint64_t seed = 7;
  long long shot = 163100;
  std::string noise = "sqrt";
  double dilate_min = 0.0;
  double dilate_max = 0.0;
  std::filesystem::path out;
};

struct SplitArgs {
  std::filesystem::path in;
  std::filesystem::path out;
};

struct FitArgs {
  std::filesystem::path in;
  std::filesystem::path out;
  double dilate = 0.0;
};

struct RunArgs {
  std::filesystem::path in;  // discharge file, or directory of chord_<k>.in
  std::filesystem::path out;
  bool serial = false;
  dispatch::ClusterConfig cluster;
};

struct CertestArgs {
  enum class Action { generate, compare } action = Action::compare;
  std::filesystem::path run_dir;    // generate
  std::filesystem::path reference;  // both
  std::filesystem::path test;       // compare
  bool overwrite = false;
  certest::ToleranceSpec tol;
  std::filesystem::path out;
};

struct BenchArgs {
  enum class Action { replay, run } action = Action::replay;
  // replay
  double serial_s = 0.0;
  double parallel_s = 0.0;
  std::optional<double> total_work;
  std::optional<double> max_task;
  std::size_t tasks = 64;
  // run
  std::filesystem::path in;
  std::size_t trials = 3;
  dispatch::ClusterConfig cluster;  // workers for replay = effective concurrency
  std::filesystem::path out;
};

struct SimulateArgs {
  std::vector<double> durations;
  std::size_t workers = 1;
  dispatch::Policy policy = dispatch::Policy::greedy_fifo;
};

struct ScriptArgs {
  std::size_t tasks = 64;
  std::string partition = "gpus";
  dispatch::ClusterConfig cluster;
  std::filesystem::path out;
};

struct Command {
  Subcommand subcommand = Subcommand::gen;
  std::variant<GenArgs, SplitArgs, FitArgs, RunArgs, CertestArgs, BenchArgs, SimulateArgs, ScriptArgs> args;
  std::optional<std::string> help;  // set when --help was requested
};

/// argv[0] is the program name. Throws Error(Errc::usage) on bad input.
Command parse_args(const std::vector<std::string>& argv);

/// Runs a parsed command. Returns 0 on success, 1 on domain failures.
int execute(const Command& cmd, std::ostream& out, std::ostream& err);

/// parse_args + execute with exit status mapping {0, 1, 2}.
int run_main(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

}  // namespace chordfit::cli

// Acceptance gate: one PASS/FAIL line per criterion, non-zero exit if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "chordfit/bench.hpp"
#include "chordfit/certest.hpp"
#include "chordfit/chordio.hpp"
#include "chordfit/cli.hpp"
#include "chordfit/dispatch.hpp"
#include "chordfit/lmfit.hpp"
#include "chordfit/pipeline.hpp"
#include "chordfit/spectra.hpp"
#include "support.hpp"

using namespace chordfit;
using testing_support::Rng;
using testing_support::TempDir;

namespace {

constexpr std::uint64_t kG = 1ULL << 30;

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail = what;
    pass = pass && ok;
  }
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "chordfit");
  std::ostringstream out, err;
  const int rc = cli::run_main(args, out, err);
  if (rc != 0) std::fprintf(stderr, "%s%s", out.str().c_str(), err.str().c_str());
  return rc;
}

dispatch::ClusterConfig cluster(std::size_t nodes, std::size_t cores, std::uint64_t per_core, std::uint64_t per_task) {
  dispatch::ClusterConfig c;
  c.nodes = nodes;
  c.cores_per_node = cores;
  c.mem_per_core = per_core;
  c.mem_per_task = per_task;
  return c;
}

// 1. Analytic Jacobian against central differences.
Verdict jacobian_vs_finite_differences() {
  Verdict v;
  Rng rng(1001);
  double worst = 0.0;
  const auto g = WavelengthGrid::uniform(499.0, 501.0, 32);
  for (int t = 0; t < 100; ++t) {
    const auto m = testing_support::random_model(rng, 499.0, 501.0, 3, true);
    const auto s = synthesize(m, g, NoiseKind::sqrt_gaussian, rng.next());
    const auto J = jacobian(m, s);
    const auto theta = m.parameters();
    const std::size_t nb = m.baseline_terms();
    double err = 0.0, ref = 0.0;
    for (std::size_t p = 0; p < theta.size(); ++p) {
      const bool shape_param = p >= nb && (p - nb) % 3 != 0;
      const double h = shape_param ? 1e-5 * m.lines[(p - nb) / 3].width : 1e-6 * std::max(1.0, std::abs(theta[p]));
      auto up = theta, dn = theta;
      up[p] += h;
      dn[p] -= h;
      SpectralModel mu = m, md = m;
      mu.set_parameters(up);
      md.set_parameters(dn);
      const auto fu = eval_model(mu, g), fd = eval_model(md, g);
      for (std::size_t i = 0; i < g.size(); ++i) {
        err = std::max(err, std::abs((fu[i] - fd[i]) / (2 * h) / s.sigma()[i] - J(i, p)));
        ref = std::max(ref, std::abs(J(i, p)));
      }
    }
    worst = std::max(worst, err / ref);
  }
  v.require(worst <= 1e-6, fmt("relative max-norm %.3g > 1e-6", worst));
  v.detail = v.pass ? fmt("worst relative max-norm %.3g over 100 models", worst) : v.detail;
  return v;
}

// 2. Noiseless recovery from a 10% perturbation.
Verdict noiseless_recovery() {
  Verdict v;
  Rng rng(2002);
  const auto g = WavelengthGrid::uniform(499.0, 501.0, 100);
  double worst_rel = 0.0, worst_chi2 = 0.0;
  for (int t = 0; t < 50; ++t) {
    SpectralModel truth;
    truth.baseline = {rng.uniform(1.0, 50.0)};
    truth.lines = {{rng.uniform(50.0, 2000.0), rng.uniform(499.6, 500.4), rng.uniform(0.05, 0.2)}};
    const auto s = synthesize(truth, g, NoiseKind::none, 0);
    auto sign = [&] { return rng.uniform() < 0.5 ? -1.0 : 1.0; };
    SpectralModel init = truth;
    init.baseline[0] *= 1.0 + 0.1 * sign();
    init.lines[0].amplitude *= 1.0 + 0.1 * sign();
    init.lines[0].center += 0.1 * sign() * truth.lines[0].width;
    init.lines[0].width *= 1.0 + 0.1 * sign();
    const auto r = lm_fit(s, init);
    const auto got = r.model.parameters(), want = truth.parameters();
    for (std::size_t i = 0; i < got.size(); ++i) worst_rel = std::max(worst_rel, std::abs(got[i] - want[i]) / std::abs(want[i]));
    worst_chi2 = std::max(worst_chi2, r.chi2);
    for (std::size_t i = 1; i < r.chi2_trace.size(); ++i) {
      v.require(r.chi2_trace[i] < r.chi2_trace[i - 1], "chi2 trace not strictly decreasing in case " + std::to_string(t));
    }
  }
  v.require(worst_rel <= 1e-6, fmt("parameter relative error %.3g > 1e-6", worst_rel));
  v.require(worst_chi2 < 1e-10 * 100, fmt("final chi2 %.3g >= 1e-10 N", worst_chi2));
  if (v.pass) v.detail = fmt("worst parameter error %.3g, worst chi2 %.3g", worst_rel, worst_chi2);
  return v;
}

// 3. Unbiased centers under noise; mirrored spectra give mirrored velocities.
Verdict statistical_sanity() {
  Verdict v;
  const double l0 = 500.0, mu_true = 500.2;
  const LineReference ref{l0, 1e10, 0.0};
  SpectralModel truth;
  truth.baseline = {5.0};
  truth.lines = {{1000.0, mu_true, 0.1}};
  const auto g = WavelengthGrid::uniform(499.0, 501.0, 100);
  std::vector<double> mirrored_px(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) mirrored_px[i] = 2 * l0 - g[g.size() - 1 - i];
  const WavelengthGrid mg(mirrored_px);

  std::vector<double> centers;
  std::size_t sign_flips = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto s = synthesize(truth, g, NoiseKind::sqrt_gaussian, 3000 + seed);
    const auto r = lm_fit(s, initial_guess(s, 1));
    centers.push_back(r.model.lines[0].center);

    std::vector<double> counts(s.counts().rbegin(), s.counts().rend());
    std::vector<double> sigma(s.sigma().rbegin(), s.sigma().rend());
    const Spectrum ms(mg, counts, sigma);
    const auto mr = lm_fit(ms, initial_guess(ms, 1));
    const double va = ion_properties(r.model.lines[0], ref).velocity;
    const double vb = ion_properties(mr.model.lines[0], ref).velocity;
    if (va * vb < 0.0 && std::abs(va + vb) <= 1e-3 * std::abs(va)) ++sign_flips;
  }
  const double n = static_cast<double>(centers.size());
  const double mean = std::accumulate(centers.begin(), centers.end(), 0.0) / n;
  double ss = 0.0;
  for (double c : centers) ss += (c - mean) * (c - mean);
  const double se = std::sqrt(ss / (n - 1)) / std::sqrt(n);
  v.require(std::abs(mean - mu_true) <= 3 * se, fmt("mean center off by %.3g nm, 3 SE = %.3g", mean - mu_true, 3 * se));
  v.require(sign_flips == 200, "velocity sign flipped in only " + std::to_string(sign_flips) + "/200 mirrored fits");
  if (v.pass) v.detail = fmt("mean center offset %.2f SE; 200/200 mirrored velocities negate", (mean - mu_true) / se);
  return v;
}

// 4. Serial reference vs 8-worker parallel run.
Verdict determinism_regression() {
  Verdict v;
  TempDir dir;
  const std::string root = dir.path().string();
  v.require(run_cli({"gen", "--chords", "64", "--seed", "7", "--out", root}) == 0, "gen failed");
  v.require(run_cli({"run", "--in", root + "/discharge.in", "--out", root + "/serial", "--serial"}) == 0, "serial run failed");
  v.require(run_cli({"run", "--in", root + "/discharge.in", "--out", root + "/parallel", "--nodes", "1", "--cores", "8"}) == 0,
            "parallel run failed");
  if (!v.pass) return v;
  certest::generate_reference(dir / "serial", dir / "ref");
  const auto report = certest::compare(dir / "ref", dir / "parallel");
  v.require(report.pass, "certest compare failed");
  v.require(report.compared_files == 64, "compared " + std::to_string(report.compared_files) + " files, expected 64");
  v.require(report.worst_abs() == 0.0 && report.worst_rel() == 0.0,
            fmt("non-zero deviation abs %.3g rel %.3g", report.worst_abs(), report.worst_rel()));
  if (v.pass) v.detail = "64/64 files, worst deviation 0";
  return v;
}

// 5. Splitter round trip.
Verdict splitter_round_trip() {
  Verdict v;
  TempDir dir;
  v.require(run_cli({"gen", "--chords", "64", "--seed", "11", "--out", dir.path().string()}) == 0, "gen failed");
  if (!v.pass) return v;
  const std::string text = chordio::read_file(dir / "discharge.in");
  const auto d = chordio::parse_discharge(text);
  const auto paths = chordio::split_chords(d, dir / "split");
  v.require(paths.size() == 64, "split produced " + std::to_string(paths.size()) + " files");
  std::size_t stanza_bytes = 0;
  for (std::size_t k = 0; k < paths.size(); ++k) {
    v.require(paths[k] == dir / "split" / ("chord_" + std::to_string(k + 1) + ".in"), "non-dense file numbering");
    const std::string body = chordio::read_file(paths[k]);
    const auto one = chordio::parse_discharge(body);
    v.require(one.chords.size() == 1 && one.chords[0].chord_id == d.chords[k].chord_id &&
                  one.chords[0].text == d.chords[k].text && one.chords[0].timeslices.size() == d.chords[k].timeslices.size(),
              "chord " + std::to_string(k + 1) + " differs after split");
    stanza_bytes += body.size() - d.header.size();
  }
  v.require(stanza_bytes == text.size() - d.header.size(), "stanza bytes not conserved");
  if (v.pass) v.detail = "64 files, " + std::to_string(stanza_bytes) + " stanza bytes conserved";
  return v;
}

// 6. Replay of the published timings.
Verdict published_number_replay() {
  Verdict v;
  char a[16], b[16];
  std::snprintf(a, sizeof a, "%.3g", bench::speedup(1016, 51));
  std::snprintf(b, sizeof b, "%.3g", bench::speedup(1010, 51));
  v.require(std::string(a) == "19.9", std::string("speedup(1016, 51) = ") + a);
  v.require(std::string(b) == "19.8", std::string("speedup(1010, 51) = ") + b);
  const auto s = bench::scaling_bounds_from_totals(1016, 30, 48, 64);
  v.require(s.lower_bound_makespan == 30.0, fmt("lower bound %.6g", s.lower_bound_makespan));
  v.require(std::abs(s.ideal_speedup - 33.9) <= 0.1, fmt("ideal speedup %.6g", s.ideal_speedup));
  if (v.pass) {
    v.detail = std::string("1016/51 = ") + a + ", 1010/51 = " + b +
               fmt(", lower bound %.4g s, ideal speedup %.4g, even split %.4g s", s.lower_bound_makespan, s.ideal_speedup,
                   s.even_split);
  }
  return v;
}

// 7. Simulator oracles.
Verdict simulator_oracle() {
  Verdict v;
  v.require(dispatch::simulate(std::vector<double>{30, 1, 1, 1}, 2).makespan == 30.0, "[30,1,1,1] on 2 workers");
  v.require(dispatch::simulate(std::vector<double>(8, 1.0), 4).makespan == 2.0, "8x1 on 4 workers");
  Rng rng(7007);
  std::size_t single_wave = 0;
  for (int i = 0; i < 500; ++i) {
    const std::size_t n = 1 + rng.index(64), p = 1 + rng.index(64);
    std::vector<double> d(n);
    for (double& x : d) x = rng.uniform(0.0, 30.0);
    const double mx = *std::max_element(d.begin(), d.end());
    const double sum = std::accumulate(d.begin(), d.end(), 0.0);
    const double m = dispatch::simulate(d, p).makespan;
    v.require(m >= std::max(mx, sum / static_cast<double>(p)) * (1 - 1e-12), "makespan below lower bound in case " + std::to_string(i));
    if (p >= n) {
      ++single_wave;
      v.require(m == mx, "single-wave case " + std::to_string(i) + " not equal to longest task");
    }
  }
  if (v.pass) v.detail = "2 oracle cases, 500 random cases (" + std::to_string(single_wave) + " single-wave)";
  return v;
}

// 8. Measured parallel runs against the simulator.
Verdict scheduling_fidelity() {
  Verdict v;
  TempDir dir;
  const std::string root = dir.path().string();
  v.require(run_cli({"gen", "--chords", "64", "--timeslices", "1", "--seed", "8", "--dilate-min", "0.05", "--dilate-max",
                     "0.5", "--out", root}) == 0,
            "gen failed");
  if (!v.pass) return v;
  chordio::split_chords(chordio::parse_discharge(chordio::read_file(dir / "discharge.in")), dir / "chords");
  const auto tasks = dispatch::discover_tasks(dir / "chords");
  const auto runner = dispatch::fit_runner();
  const auto serial = dispatch::run_serial(tasks, runner);
  const auto parallel = dispatch::run_parallel(tasks, cluster(1, 8, kG, kG), runner);
  v.require(!serial.any_failed() && !parallel.any_failed(), "a task failed");
  const double predicted = dispatch::simulate(parallel.durations(), 8).makespan;
  const double rel = std::abs(parallel.makespan - predicted) / predicted;
  const auto bounds = bench::scaling_bounds(serial.durations(), 8);
  const double observed = bench::speedup(serial.makespan, parallel.makespan);
  v.require(rel <= 0.25, fmt("makespan %.4g s vs predicted %.4g s", parallel.makespan, predicted));
  v.require(observed >= 0.75 * bounds.ideal_speedup, fmt("speedup %.4g < 0.75 x ideal %.4g", observed, bounds.ideal_speedup));
  if (v.pass) {
    v.detail = fmt("makespan %.3f s vs simulated %.3f s, ", parallel.makespan, predicted) +
               fmt("speedup %.3g of ideal %.3g", observed, bounds.ideal_speedup);
  }
  return v;
}

// 9. Resource model and observed overlap.
Verdict resource_model() {
  Verdict v;
  v.require(dispatch::effective_concurrency(cluster(2, 24, kG, kG)) == 48, "2 x 24 cores did not give 48");
  const auto cfg = cluster(1, 4, kG, 2 * kG);
  std::vector<dispatch::ChordTask> tasks(8);
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    tasks[i].index = i + 1;
    tasks[i].sim_duration = 0.05;
  }
  const auto r = dispatch::run_parallel(tasks, cfg, [](const dispatch::ChordTask& t) {
    std::this_thread::sleep_for(std::chrono::duration<double>(t.sim_duration));
  });
  const std::size_t peak = dispatch::peak_concurrency(r.records);
  v.require(peak == 2, "peak overlap " + std::to_string(peak) + ", expected 2");
  if (v.pass) v.detail = "48 workers on 2x24; memory-bound node peaked at 2 concurrent tasks";
  return v;
}

// 10. Batch script text.
Verdict batch_script() {
  Verdict v;
  const std::string expected =
      "#!/bin/bash\n"
      "#SBATCH -p gpus\n"
      "#SBATCH --array=1-64\n"
      "#SBATCH --cpus-per-task=1\n"
      "#SBATCH -n 1\n"
      "#SBATCH --ntasks-per-node=24\n"
      "#SBATCH --mem-per-cpu=1G\n"
      "\n"
      "srun time cerfit < chord $SLURM_ARRAY_TASK_ID.in \\\n"
      ">& fit_$SLURM_ARRAY_TASK_ID.out\n";
  const auto got = dispatch::emit_batch_script(64, cluster(2, 24, kG, kG), "gpus");
  v.require(got == expected, "script differs from the reference listing");
  if (v.pass) v.detail = std::to_string(got.size()) + " bytes identical";
  return v;
}

// 11. In-fit component fractions.
Verdict component_breakdown() {
  Verdict v;
  FitTimers t;
  t.model_eval_seconds = 0.16;
  t.linear_solve_seconds = 0.10;
  t.total_seconds = 1.0;
  const auto synth = bench::component_breakdown(std::vector<FitTimers>{t});
  v.require(synth.model_eval == 0.16 && synth.linear_solve == 0.10 && std::abs(synth.other - 0.74) <= 1e-15,
            fmt("synthetic fractions {%.17g, %.17g, %.17g}", synth.model_eval, synth.linear_solve, synth.other));

  Rng rng(1111);
  const auto g = WavelengthGrid::uniform(498.5, 501.5, 100);
  std::vector<FitResult> fits;
  for (int i = 0; i < 64; ++i) {
    const auto m = testing_support::random_model(rng, 498.5, 501.5, 1, false);
    const auto s = synthesize(m, g, NoiseKind::sqrt_gaussian, rng.next());
    fits.push_back(lm_fit(s, initial_guess(s, 1)));
  }
  const auto f = bench::component_breakdown(fits);
  for (double x : {f.model_eval, f.linear_solve, f.other}) v.require(x >= 0.0 && x <= 1.0, "fraction outside [0, 1]");
  v.require(std::abs(f.model_eval + f.linear_solve + f.other - 1.0) <= 1e-12, "fractions do not sum to 1");
  if (v.pass) v.detail = fmt("64 real fits: model_eval %.3f, linear_solve %.3f, other %.3f", f.model_eval, f.linear_solve, f.other);
  return v;
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Verdict()> check;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "jacobian vs finite differences", 5, jacobian_vs_finite_differences},
      {2, "noiseless recovery", 10, noiseless_recovery},
      {3, "statistical sanity", 30, statistical_sanity},
      {4, "serial/parallel regression", 60, determinism_regression},
      {5, "splitter round trip", 1, splitter_round_trip},
      {6, "published number replay", 1, published_number_replay},
      {7, "simulator oracle", 5, simulator_oracle},
      {8, "scheduling fidelity", 60, scheduling_fidelity},
      {9, "resource model", 10, resource_model},
      {10, "batch script", 1, batch_script},
      {11, "component breakdown", 5, component_breakdown},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.check();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("exception: ") + e.what();
    }
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (elapsed > c.budget_s) {
      v.pass = false;
      v.detail += fmt(" (runtime %.2f s over %.0f s budget)", elapsed, c.budget_s);
    }
    std::printf("[%s] %2d %-32s %7.2f s  %s\n", v.pass ? "PASS" : "FAIL", c.id, c.name, elapsed, v.detail.c_str());
    std::fflush(stdout);
    failed += !v.pass;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "chordfit/bench.hpp"
#include "chordfit/error.hpp"
#include "chordfit/lmfit.hpp"
#include "support.hpp"

using namespace chordfit;
using namespace chordfit::bench;
using testing_support::Rng;

namespace {

template <class F>
Errc code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no chordfit::Error thrown";
  return Errc::usage;
}

dispatch::RunReport fake_report(const std::vector<double>& durations) {
  dispatch::RunReport r;
  double t = 0.0;
  for (std::size_t i = 0; i < durations.size(); ++i) {
    dispatch::TaskRecord rec;
    rec.index = i + 1;
    rec.start = t;
    rec.end = t + durations[i];
    t = rec.end;
    r.records.push_back(rec);
  }
  return r;
}

}  // namespace

TEST(Summarize, MeanOfThreeTrials) {
  const auto t = summarize("serial", {1005, 1010, 1015});
  EXPECT_DOUBLE_EQ(t.mean, 1010.0);
  EXPECT_DOUBLE_EQ(t.stddev, 5.0);
  EXPECT_TRUE(t.stddev_defined);
}

TEST(Summarize, SingleTrialStddevFlagged) {
  const auto t = summarize("serial", {42.0});
  EXPECT_EQ(t.mean, 42.0);
  EXPECT_EQ(t.stddev, 0.0);
  EXPECT_FALSE(t.stddev_defined);
}

TEST(Benchmark, MeanWithinTrialRangeProperty) {
  int calls = 0;
  const auto t = benchmark([&] { ++calls; }, 5, "noop");
  EXPECT_EQ(calls, 5);
  ASSERT_EQ(t.trials.size(), 5u);
  EXPECT_GE(t.mean, *std::min_element(t.trials.begin(), t.trials.end()));
  EXPECT_LE(t.mean, *std::max_element(t.trials.begin(), t.trials.end()));
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> v(1 + rng.index(10));
    for (double& x : v) x = rng.uniform(0.1, 100.0);
    const auto s = summarize("x", v);
    EXPECT_GE(s.mean, *std::min_element(v.begin(), v.end()) * (1 - 1e-15));
    EXPECT_LE(s.mean, *std::max_element(v.begin(), v.end()) * (1 + 1e-15));
  }
}

TEST(Benchmark, FailingTrialStopsSet) {
  int calls = 0;
  const auto t = benchmark(
      [&] {
        if (++calls == 2) throw std::runtime_error("worker died");
      },
      3);
  EXPECT_EQ(calls, 2);
  EXPECT_EQ(t.trials.size(), 1u);
  ASSERT_TRUE(t.failure.has_value());
  EXPECT_NE(t.failure->find("worker died"), std::string::npos);
}

TEST(Speedup, PublishedNumbers) {
  EXPECT_NEAR(speedup(1016, 51), 19.92, 0.005);
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.3g", speedup(1016, 51));
  EXPECT_STREQ(buf, "19.9");
  std::snprintf(buf, sizeof buf, "%.3g", speedup(1010, 51));
  EXPECT_STREQ(buf, "19.8");
}

TEST(Speedup, IdentityExactAndErrors) {
  EXPECT_EQ(speedup(7.5, 7.5), 1.0);
  EXPECT_EQ(speedup(100, 4), 25.0);
  EXPECT_EQ(code_of([] { speedup(0, 1); }), Errc::domain);
  EXPECT_EQ(code_of([] { speedup(1, -1); }), Errc::domain);
}

TEST(Speedup, ReciprocalProperty) {
  Rng rng(2);
  for (int i = 0; i < 500; ++i) {
    const double a = rng.uniform(1e-3, 1e4), b = rng.uniform(1e-3, 1e4);
    EXPECT_NEAR(speedup(a, b) * speedup(b, a), 1.0, 1e-14);
  }
}

TEST(ScalingBounds, LongPoleDominates) {
  const auto s = scaling_bounds_from_totals(1016, 30, 48, 64, 51.0);
  EXPECT_NEAR(s.even_split, 21.1667, 1e-4);
  EXPECT_EQ(s.lower_bound_makespan, 30.0);
  EXPECT_NEAR(s.ideal_speedup, 33.9, 0.1);
  EXPECT_NEAR(*s.overhead, 21.0, 1e-12);
}

TEST(ScalingBounds, SerialLimitAndBalancedWave) {
  const std::vector<double> d{2, 3, 4};
  const auto one = scaling_bounds(d, 1);
  EXPECT_EQ(one.lower_bound_makespan, 9.0);
  EXPECT_EQ(one.ideal_speedup, 1.0);
  const auto wide = scaling_bounds(std::vector<double>(6, 2.5), 8);
  EXPECT_EQ(wide.lower_bound_makespan, 2.5);
  EXPECT_EQ(wide.ideal_speedup, 6.0);
}

TEST(ScalingBounds, ZeroWork) {
  const auto s = scaling_bounds(std::vector<double>{0.0, 0.0}, 4);
  EXPECT_EQ(s.lower_bound_makespan, 0.0);
  EXPECT_EQ(s.ideal_speedup, 1.0);
}

TEST(ScalingBounds, NeverAboveSimulatedMakespanProperty) {
  Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    const std::size_t n = 1 + rng.index(80), p = 1 + rng.index(64);
    std::vector<double> d(n);
    for (double& x : d) x = rng.uniform(0.01, 30.0);
    const auto s = scaling_bounds(d, p);
    const double sim = dispatch::simulate(d, p).makespan;
    EXPECT_LE(s.lower_bound_makespan, sim * (1 + 1e-12));
    EXPECT_LE(s.ideal_speedup, static_cast<double>(std::min(n, p)) * (1 + 1e-12));
  }
}

TEST(PerChordTable, Shape) {
  std::vector<dispatch::RunReport> trials;
  for (int t = 0; t < 3; ++t) trials.push_back(fake_report(std::vector<double>(64, 1.0 + t)));
  std::istringstream csv(per_chord_table(trials));
  std::string line;
  std::size_t rows = 0;
  std::getline(csv, line);
  EXPECT_EQ(line, "chord,trial_1,trial_2,trial_3");
  while (std::getline(csv, line)) {
    ++rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 3);
  }
  EXPECT_EQ(rows, 64u);
  std::vector<dispatch::RunReport> single{fake_report({0.5})};
  EXPECT_EQ(per_chord_table(single), "chord,trial_1\n1,0.5\n");
  EXPECT_EQ(per_chord_gnuplot(single), "# chord trial_1_s\n1 0.5\n");
}

TEST(PerChordTable, MismatchedTrials) {
  std::vector<dispatch::RunReport> trials{fake_report({1, 2}), fake_report({1})};
  EXPECT_EQ(code_of([&] { per_chord_table(trials); }), Errc::shape);
}

TEST(ComponentBreakdown, SyntheticFractions) {
  FitTimers t;
  t.model_eval_seconds = 0.16;
  t.linear_solve_seconds = 0.10;
  t.total_seconds = 1.0;
  const std::vector<FitTimers> v{t};
  const auto f = component_breakdown(v);
  EXPECT_EQ(f.model_eval, 0.16);
  EXPECT_EQ(f.linear_solve, 0.10);
  EXPECT_NEAR(f.other, 0.74, 1e-15);
}

TEST(ComponentBreakdown, SingleComponentAndZero) {
  FitTimers t;
  t.model_eval_seconds = 2.0;
  t.total_seconds = 2.0;
  const auto f = component_breakdown(std::vector<FitTimers>{t});
  EXPECT_EQ(f.model_eval, 1.0);
  EXPECT_EQ(f.linear_solve, 0.0);
  EXPECT_EQ(f.other, 0.0);
  EXPECT_EQ(code_of([] { component_breakdown(std::vector<FitTimers>{FitTimers{}}); }), Errc::degenerate_timing);
}

TEST(ComponentBreakdown, RealFitsSumToOne) {
  Rng rng(4);
  const auto g = WavelengthGrid::uniform(499.0, 501.0, 100);
  std::vector<FitResult> fits;
  for (int i = 0; i < 64; ++i) {
    const auto m = testing_support::random_model(rng, 499.0, 501.0, 1, false);
    const auto s = synthesize(m, g, NoiseKind::sqrt_gaussian, rng.next());
    fits.push_back(lm_fit(s, initial_guess(s, 1)));
  }
  const auto f = component_breakdown(fits);
  for (double x : {f.model_eval, f.linear_solve, f.other}) {
    EXPECT_GE(x, 0.0);
    EXPECT_LE(x, 1.0);
  }
  EXPECT_NEAR(f.model_eval + f.linear_solve + f.other, 1.0, 1e-12);
}

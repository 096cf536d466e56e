#pragma once

#include <unistd.h>

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "chordfit/spectra.hpp"

namespace testing_support {

// SplitMix64: small, seedable, and independent of the library's generator.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(next() % n); }

 private:
  std::uint64_t state_;
};

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("chordfit_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

// Random model over [lo, hi] with 1..max_lines lines inside the window.
inline chordfit::SpectralModel random_model(Rng& rng, double lo, double hi, std::size_t max_lines,
                                            bool allow_slope) {
  chordfit::SpectralModel m;
  m.baseline = {rng.uniform(1.0, 50.0)};
  if (allow_slope && rng.uniform() < 0.5) m.baseline.push_back(rng.uniform(-5.0, 5.0));
  const std::size_t n = 1 + rng.index(max_lines);
  const double w = hi - lo;
  for (std::size_t k = 0; k < n; ++k) {
    m.lines.push_back({rng.uniform(50.0, 2000.0), rng.uniform(lo + 0.2 * w, hi - 0.2 * w),
                       rng.uniform(0.03 * w, 0.12 * w)});
  }
  return m;
}

}  // namespace testing_support

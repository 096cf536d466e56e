#pragma once

// Spectral line model: sum of Gaussians over a low-order polynomial baseline,
// synthetic spectra, and Doppler conversion of fitted lines to ion properties.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace chordfit {

inline constexpr double kSpeedOfLight = 299'792'458.0;  // m/s

/// Strictly increasing, finite, positive wavelength axis (nm), at least 4 pixels.
class WavelengthGrid {
 public:
  static constexpr std::size_t kMinPixels = 4;

  explicit WavelengthGrid(std::vector<double> pixels);

  /// n pixels evenly spaced from lo to hi inclusive.
  static WavelengthGrid uniform(double lo, double hi, std::size_t n);

  std::span<const double> pixels() const noexcept { return pixels_; }
  std::size_t size() const noexcept { return pixels_.size(); }
  double operator[](std::size_t i) const noexcept { return pixels_[i]; }
  double front() const noexcept { return pixels_.front(); }
  double back() const noexcept { return pixels_.back(); }
  double span_width() const noexcept { return pixels_.back() - pixels_.front(); }
  double median_spacing() const;

 private:
  std::vector<double> pixels_;
};

/// One chord/timeslice measurement. counts and sigma are aligned with the grid.
class Spectrum {
 public:
  Spectrum(WavelengthGrid grid, std::vector<double> counts, std::vector<double> sigma);

  const WavelengthGrid& grid() const noexcept { return grid_; }
  std::span<const double> counts() const noexcept { return counts_; }
  std::span<const double> sigma() const noexcept { return sigma_; }
  std::size_t size() const noexcept { return counts_.size(); }

 private:
  WavelengthGrid grid_;
  std::vector<double> counts_;
  std::vector<double> sigma_;
};

struct GaussianLine {
  double amplitude = 0.0;  // peak height, counts
  double center = 0.0;     // nm
  double width = 0.0;      // Gaussian standard deviation, nm

  friend bool operator==(const GaussianLine&, const GaussianLine&) = default;
};

/// Baseline polynomial (degree 0 or 1) plus Gaussian components.
///
/// The flattened parameter vector is ordered baseline coefficients first,
/// then (amplitude, center, width) for each line in list order.
struct SpectralModel {
  static constexpr std::size_t kMaxBaselineDegree = 1;

  std::vector<double> baseline{0.0};
  std::vector<GaussianLine> lines;

  std::size_t baseline_terms() const noexcept { return baseline.size(); }
  std::size_t parameter_count() const noexcept { return baseline.size() + 3 * lines.size(); }

  std::vector<double> parameters() const;
  void set_parameters(std::span<const double> theta);

  /// Throws Errc::model_domain on a non-finite parameter, a bad baseline
  /// degree, negative amplitude or non-positive width.
  void validate() const;

  friend bool operator==(const SpectralModel&, const SpectralModel&) = default;
};

struct LineReference {
  double lambda0 = 0.0;          // rest wavelength, nm
  double ion_rest_energy = 0.0;  // m c^2, eV
  double sigma_instr = 0.0;      // instrumental Gaussian width, nm

  void validate() const;
};

struct IonProperties {
  double velocity = 0.0;     // line of sight, m/s
  double temperature = 0.0;  // eV
  double radiance = 0.0;     // counts nm
};

enum class NoiseKind { none, sqrt_gaussian };

/// S(lambda_i) for every pixel.
std::vector<double> eval_model(const SpectralModel& model, const WavelengthGrid& grid);

/// Evaluates the model and optionally adds seeded sqrt(S)-scaled Gaussian noise.
/// sigma is sqrt(max(counts, 1)) with noise, 1 everywhere without.
Spectrum synthesize(const SpectralModel& model, const WavelengthGrid& grid, NoiseKind noise,
                    std::uint64_t seed);

IonProperties ion_properties(const GaussianLine& line, const LineReference& ref);

/// Heuristic starting point for a fit with n_lines components and a constant baseline.
SpectralModel initial_guess(const Spectrum& spectrum, std::size_t n_lines);

}  // namespace chordfit

#include "chordfit/spectra.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <string>

#include "chordfit/error.hpp"

namespace chordfit {

namespace {

// FWHM of a Gaussian in units of its standard deviation.
const double kFwhmPerSigma = 2.0 * std::sqrt(2.0 * std::numbers::ln2);

constexpr std::size_t kMinPeakSeparation = 3;

double median(std::vector<double> v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

WavelengthGrid::WavelengthGrid(std::vector<double> pixels) : pixels_(std::move(pixels)) {
  if (pixels_.size() < kMinPixels) {
    throw Error(Errc::shape, "wavelength grid needs at least " + std::to_string(kMinPixels) +
                                 " pixels, got " + std::to_string(pixels_.size()));
  }
  for (std::size_t i = 0; i < pixels_.size(); ++i) {
    if (!std::isfinite(pixels_[i]) || pixels_[i] <= 0.0) {
      throw Error(Errc::shape, "wavelength grid values must be finite and positive");
    }
    if (i > 0 && !(pixels_[i] > pixels_[i - 1])) {
      throw Error(Errc::shape, "wavelength grid must be strictly increasing");
    }
  }
}

WavelengthGrid WavelengthGrid::uniform(double lo, double hi, std::size_t n) {
  if (n < 2 || !(hi > lo)) throw Error(Errc::shape, "uniform grid needs n >= 2 and hi > lo");
  std::vector<double> px(n);
  const double step = (hi - lo) / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) px[i] = lo + step * static_cast<double>(i);
  px.back() = hi;
  return WavelengthGrid(std::move(px));
}

double WavelengthGrid::median_spacing() const {
  std::vector<double> d(pixels_.size() - 1);
  for (std::size_t i = 1; i < pixels_.size(); ++i) d[i - 1] = pixels_[i] - pixels_[i - 1];
  return median(std::move(d));
}

Spectrum::Spectrum(WavelengthGrid grid, std::vector<double> counts, std::vector<double> sigma)
    : grid_(std::move(grid)), counts_(std::move(counts)), sigma_(std::move(sigma)) {
  if (counts_.size() != grid_.size() || sigma_.size() != grid_.size()) {
    throw Error(Errc::shape, "spectrum counts/sigma length must match grid (" +
                                 std::to_string(grid_.size()) + ")");
  }
  for (double s : sigma_) {
    if (!std::isfinite(s) || s <= 0.0) {
      throw Error(Errc::shape, "per-pixel sigma must be finite and positive");
    }
  }
  // Non-finite counts are representable so the fitter can reject them as a
  // bad initial model rather than failing at construction.
}

std::vector<double> SpectralModel::parameters() const {
  std::vector<double> theta;
  theta.reserve(parameter_count());
  theta.insert(theta.end(), baseline.begin(), baseline.end());
  for (const auto& l : lines) {
    theta.push_back(l.amplitude);
    theta.push_back(l.center);
    theta.push_back(l.width);
  }
  return theta;
}

void SpectralModel::set_parameters(std::span<const double> theta) {
  if (theta.size() != parameter_count()) {
    throw Error(Errc::shape, "parameter vector length " + std::to_string(theta.size()) +
                                 " does not match model (" + std::to_string(parameter_count()) +
                                 ")");
  }
  std::size_t p = 0;
  for (auto& b : baseline) b = theta[p++];
  for (auto& l : lines) {
    l.amplitude = theta[p++];
    l.center = theta[p++];
    l.width = theta[p++];
  }
}

void SpectralModel::validate() const {
  if (baseline.empty() || baseline.size() > kMaxBaselineDegree + 1) {
    throw Error(Errc::model_domain, "baseline must have 1 or 2 coefficients");
  }
  if (!all_finite(baseline)) throw Error(Errc::model_domain, "non-finite baseline coefficient");
  for (const auto& l : lines) {
    if (!std::isfinite(l.amplitude) || !std::isfinite(l.center) || !std::isfinite(l.width)) {
      throw Error(Errc::model_domain, "non-finite line parameter");
    }
    if (l.amplitude < 0.0) throw Error(Errc::model_domain, "negative line amplitude");
    if (l.width <= 0.0) throw Error(Errc::model_domain, "line width must be positive");
  }
}

void LineReference::validate() const {
  if (!(lambda0 > 0.0) || !std::isfinite(lambda0)) {
    throw Error(Errc::model_domain, "rest wavelength must be positive");
  }
  if (!(ion_rest_energy > 0.0) || !std::isfinite(ion_rest_energy)) {
    throw Error(Errc::model_domain, "ion rest energy must be positive");
  }
  if (!(sigma_instr >= 0.0) || !std::isfinite(sigma_instr)) {
    throw Error(Errc::model_domain, "instrumental width must be non-negative");
  }
}

std::vector<double> eval_model(const SpectralModel& model, const WavelengthGrid& grid) {
  model.validate();
  std::vector<double> out(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double lam = grid[i];
    double s = model.baseline[0];
    if (model.baseline.size() > 1) s += model.baseline[1] * lam;
    for (const auto& l : model.lines) {
      const double dx = lam - l.center;
      s += l.amplitude * std::exp(-dx * dx / (2.0 * l.width * l.width));
    }
    out[i] = s;
  }
  return out;
}

Spectrum synthesize(const SpectralModel& model, const WavelengthGrid& grid, NoiseKind noise,
                    std::uint64_t seed) {
  std::vector<double> counts = eval_model(model, grid);
  std::vector<double> sigma(counts.size(), 1.0);
  if (noise == NoiseKind::sqrt_gaussian) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    for (auto& c : counts) c += std::sqrt(std::max(c, 1.0)) * unit(rng);
    for (std::size_t i = 0; i < counts.size(); ++i) sigma[i] = std::sqrt(std::max(counts[i], 1.0));
  }
  return Spectrum(grid, std::move(counts), std::move(sigma));
}

IonProperties ion_properties(const GaussianLine& line, const LineReference& ref) {
  ref.validate();
  if (!std::isfinite(line.amplitude) || !std::isfinite(line.center) || !std::isfinite(line.width)) {
    throw Error(Errc::model_domain, "non-finite line parameter");
  }
  if (line.amplitude < 0.0 || line.width <= 0.0) {
    throw Error(Errc::model_domain, "line needs amplitude >= 0 and width > 0");
  }
  if (line.width <= ref.sigma_instr) {
    throw Error(Errc::width_below_instrument,
                "line width " + std::to_string(line.width) + " nm does not exceed instrumental width " +
                    std::to_string(ref.sigma_instr) + " nm");
  }
  IonProperties p;
  p.velocity = kSpeedOfLight * (line.center - ref.lambda0) / ref.lambda0;
  const double thermal2 = line.width * line.width - ref.sigma_instr * ref.sigma_instr;
  p.temperature = ref.ion_rest_energy * thermal2 / (ref.lambda0 * ref.lambda0);
  p.radiance = line.amplitude * line.width * std::sqrt(2.0 * std::numbers::pi);
  return p;
}

SpectralModel initial_guess(const Spectrum& spectrum, std::size_t n_lines) {
  if (n_lines == 0) throw Error(Errc::model_domain, "initial guess needs at least one line");
  const auto counts = spectrum.counts();
  const auto& grid = spectrum.grid();
  const std::size_t n = counts.size();
  if (!all_finite(counts)) throw Error(Errc::bad_initial_model, "spectrum has non-finite counts");

  const std::size_t edge = std::max<std::size_t>(1, (n + 9) / 10);
  std::vector<double> edge_px;
  edge_px.reserve(2 * edge);
  for (std::size_t i = 0; i < edge; ++i) {
    edge_px.push_back(counts[i]);
    edge_px.push_back(counts[n - 1 - i]);
  }
  const double b0 = median(std::move(edge_px));

  std::vector<double> excess(n);
  for (std::size_t i = 0; i < n; ++i) excess[i] = counts[i] - b0;

  auto by_height = [&](std::size_t a, std::size_t b) {
    return excess[a] != excess[b] ? excess[a] > excess[b] : a < b;
  };
  auto far_from = [](const std::vector<std::size_t>& chosen, std::size_t i) {
    return std::all_of(chosen.begin(), chosen.end(), [i](std::size_t c) {
      return (i > c ? i - c : c - i) >= kMinPeakSeparation;
    });
  };

  std::vector<std::size_t> maxima;
  for (std::size_t i = 0; i < n; ++i) {
    if (excess[i] <= 0.0) continue;
    const bool left_ok = i == 0 || excess[i] >= excess[i - 1];
    const bool right_ok = i + 1 == n || excess[i] > excess[i + 1];
    if (left_ok && right_ok) maxima.push_back(i);
  }
  if (maxima.empty()) throw Error(Errc::flat_spectrum, "no local maximum above baseline");
  std::sort(maxima.begin(), maxima.end(), by_height);

  std::vector<std::size_t> peaks;
  for (std::size_t i : maxima) {
    if (peaks.size() == n_lines) break;
    if (far_from(peaks, i)) peaks.push_back(i);
  }
  if (peaks.size() < n_lines) {
    // Fewer resolved maxima than requested components: seed the remainder on
    // the strongest remaining pixels that respect the separation rule.
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < n; ++i) {
      if (excess[i] > 0.0) rest.push_back(i);
    }
    std::sort(rest.begin(), rest.end(), by_height);
    for (std::size_t i : rest) {
      if (peaks.size() == n_lines) break;
      if (far_from(peaks, i)) peaks.push_back(i);
    }
  }
  if (peaks.size() < n_lines) {
    throw Error(Errc::flat_spectrum, "only " + std::to_string(peaks.size()) +
                                         " separable peaks above baseline for " +
                                         std::to_string(n_lines) + " lines");
  }

  const double min_width = 0.5 * grid.median_spacing();
  SpectralModel model;
  model.baseline = {b0};
  for (std::size_t p : peaks) {
    const double half = 0.5 * excess[p];
    std::optional<double> left, right;
    for (std::size_t j = p; j-- > 0;) {
      if (excess[j] < half) {
        const double t = (half - excess[j]) / (excess[j + 1] - excess[j]);
        left = grid[j] + t * (grid[j + 1] - grid[j]);
        break;
      }
    }
    for (std::size_t j = p + 1; j < n; ++j) {
      if (excess[j] < half) {
        const double t = (excess[j - 1] - half) / (excess[j - 1] - excess[j]);
        right = grid[j - 1] + t * (grid[j] - grid[j - 1]);
        break;
      }
    }
    double fwhm = grid.span_width();
    if (left && right) {
      fwhm = *right - *left;
    } else if (left) {
      fwhm = 2.0 * (grid[p] - *left);
    } else if (right) {
      fwhm = 2.0 * (*right - grid[p]);
    }
    GaussianLine line;
    line.center = grid[p];
    line.amplitude = std::max(excess[p], 1.0);
    line.width = std::max(fwhm / kFwhmPerSigma, min_width);
    model.lines.push_back(line);
  }
  return model;
}

}  // namespace chordfit

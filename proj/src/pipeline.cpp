#include "chordfit/pipeline.hpp"

#include <limits>

#include "chordfit/error.hpp"

namespace chordfit {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

chordio::FitOutputRecord make_record(const std::string& chord_id, double time, const FitResult& fit,
                                     const LineReference& ref) {
  chordio::FitOutputRecord rec;
  rec.chord_id = chord_id;
  rec.time = time;
  rec.chi2 = fit.chi2;
  rec.dof = fit.dof;
  rec.converged = fit.converged;

  const std::vector<double> err = fit.uncertainties();
  const std::size_t nb = fit.model.baseline_terms();
  for (std::size_t k = 0; k < fit.model.lines.size(); ++k) {
    const auto& l = fit.model.lines[k];
    chordio::LineFit lf{l.amplitude, l.center, l.width, kNaN, kNaN, kNaN};
    if (!err.empty()) {
      lf.amplitude_err = err[nb + 3 * k];
      lf.center_err = err[nb + 3 * k + 1];
      lf.width_err = err[nb + 3 * k + 2];
    }
    rec.lines.push_back(lf);
  }

  const auto& primary = fit.model.lines.front();
  try {
    const IonProperties ion = ion_properties(primary, ref);
    rec.velocity = ion.velocity;
    rec.temperature = ion.temperature;
    rec.radiance = ion.radiance;
  } catch (const Error& e) {
    if (e.code() != Errc::width_below_instrument) throw;
    const IonProperties ion = ion_properties(primary, LineReference{ref.lambda0, ref.ion_rest_energy, 0.0});
    rec.velocity = ion.velocity;
    rec.temperature = kNaN;
    rec.radiance = ion.radiance;
  }
  return rec;
}

ChordFitOutcome fit_chord(const chordio::ChordBlock& block, const FitOptions& options) {
  ChordFitOutcome out;
  for (const auto& ts : block.timeslices) {
    try {
      const Spectrum spectrum = ts.spectrum();
      const SpectralModel init = initial_guess(spectrum, block.n_lines);
      FitResult fit = lm_fit(spectrum, init, options);
      out.records.push_back(make_record(block.chord_id, ts.time, fit, block.line_ref));
      out.fits.push_back(std::move(fit));
    } catch (const Error&) {
      chordio::FitOutputRecord failed;
      failed.chord_id = block.chord_id;
      failed.time = ts.time;
      failed.chi2 = kNaN;
      failed.velocity = failed.temperature = failed.radiance = kNaN;
      out.records.push_back(std::move(failed));
    }
  }
  return out;
}

std::size_t fit_chord_file(const std::filesystem::path& input, const std::filesystem::path& output,
                           const FitOptions& options) {
  const auto discharge = chordio::parse_discharge(chordio::read_file(input));
  if (discharge.chords.size() != 1) {
    throw Error(Errc::mixed_chord, input.string() + " holds " + std::to_string(discharge.chords.size()) +
                                       " chords; a fit output covers exactly one");
  }
  const auto& block = discharge.chords.front();
  const ChordFitOutcome outcome = fit_chord(block, options);
  chordio::write_file(output, chordio::format_fit_output(block.chord_id, outcome.records));
  std::size_t failed = 0;
  for (const auto& r : outcome.records) failed += r.failed() ? 1 : 0;
  return failed;
}

}  // namespace chordfit

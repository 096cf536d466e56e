#pragma once

// One chord's worth of fitting: materialise each timeslice, seed, fit, and
// convert the primary line to ion properties.

#include <cstddef>
#include <filesystem>
#include <vector>

#include "chordfit/chordio.hpp"
#include "chordfit/lmfit.hpp"

namespace chordfit {

struct ChordFitOutcome {
  std::vector<chordio::FitOutputRecord> records;
  std::vector<FitResult> fits;  // successful fits only, in timeslice order
};

/// Builds the output record for one fit. Ion properties come from the first
/// line; temperature is NaN when that line is narrower than the instrument.
chordio::FitOutputRecord make_record(const std::string& chord_id, double time, const FitResult& fit,
                                     const LineReference& ref);

/// Fits every timeslice of a chord. A timeslice whose seeding or fit throws is
/// emitted as a failed record and the chord continues.
ChordFitOutcome fit_chord(const chordio::ChordBlock& block, const FitOptions& options = {});

/// Reads a single-chord input file, fits it and writes the fit output file.
/// Returns the number of failed timeslices.
std::size_t fit_chord_file(const std::filesystem::path& input, const std::filesystem::path& output,
                           const FitOptions& options = {});

}  // namespace chordfit

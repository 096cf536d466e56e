#pragma once

// Discharge input files, per-chord splitting, and per-chord fit output files.
//
// Discharge input (line oriented, '#' starts a comment):
//
//   SHOT <int>
//   (free-form header lines)
//   CHORD <id>
//     LAMBDA0 <nm>  IONREST <eV>  SIGINSTR <nm>  NLINES <int>  [DILATE <s>]
//     TIME <s> GEN A=<counts> MU=<nm> SIG=<nm> B0=<counts> [B1=<counts/nm>]
//                  NOISE=<none|sqrt> SEED=<int> GRID=<min_nm>,<max_nm>,<npix>
//     TIME <s> DATA <npix>
//       <lambda> <counts> <sigma>      (npix rows)
//
// A stanza starts at a line beginning with the literal token CHORD and runs
// to the next such line or end of file. A, MU and SIG accept comma-separated
// lists for multi-line recipes.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "chordfit/lmfit.hpp"
#include "chordfit/spectra.hpp"

namespace chordfit::chordio {

struct GenRecipe {
  SpectralModel truth;
  NoiseKind noise = NoiseKind::none;
  std::uint64_t seed = 0;
  double grid_min = 0.0;
  double grid_max = 0.0;
  std::size_t npix = 0;

  Spectrum synthesize() const;
};

struct Timeslice {
  double time = 0.0;
  std::variant<GenRecipe, Spectrum> source;

  Spectrum spectrum() const;
};

struct ChordBlock {
  std::string chord_id;
  LineReference line_ref;
  std::size_t n_lines = 1;
  double dilate_seconds = 0.0;  // artificial per-task delay for scheduling studies
  std::vector<Timeslice> timeslices;
  std::string text;  // verbatim stanza bytes
};

struct DischargeInput {
  long long shot = 0;
  std::string header;  // verbatim bytes before the first CHORD line
  std::vector<ChordBlock> chords;
};

DischargeInput parse_discharge(std::string_view text);

/// Writes chord_<k>.in (k 1-based) holding the header plus one stanza each.
std::vector<std::filesystem::path> split_chords(const DischargeInput& input,
                                                const std::filesystem::path& out_dir);

// Text builders used by the generator; parse_discharge reads back what they write.
std::string format_header(long long shot, std::string_view comment = {});
std::string format_stanza(const ChordBlock& block);

std::filesystem::path chord_input_name(std::size_t k);
std::filesystem::path fit_output_name(std::size_t k);

struct LineFit {
  double amplitude = 0.0;
  double center = 0.0;
  double width = 0.0;
  double amplitude_err = 0.0;
  double center_err = 0.0;
  double width_err = 0.0;
};

struct FitOutputRecord {
  std::string chord_id;
  double time = 0.0;
  std::vector<LineFit> lines;
  double chi2 = 0.0;
  std::size_t dof = 0;
  std::optional<Convergence> converged;  // nullopt marks a failed fit
  double velocity = 0.0;
  double temperature = 0.0;
  double radiance = 0.0;

  bool failed() const noexcept { return !converged.has_value(); }
};

std::string format_fit_output(std::string_view chord_id, const std::vector<FitOutputRecord>& records);

/// Writes fit_<k>.out under out_dir. Every record must belong to chord_id.
std::filesystem::path write_fit_output(std::string_view chord_id,
                                       const std::vector<FitOutputRecord>& records, std::size_t k,
                                       const std::filesystem::path& out_dir);

std::vector<FitOutputRecord> parse_fit_output(std::string_view text);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view text);

}  // namespace chordfit::chordio

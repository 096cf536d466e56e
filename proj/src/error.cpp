#include "chordfit/error.hpp"

namespace chordfit {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::model_domain: return "model-domain";
    case Errc::width_below_instrument: return "width-below-instrument";
    case Errc::flat_spectrum: return "flat-spectrum";
    case Errc::shape: return "shape";
    case Errc::singular_width: return "singular-width";
    case Errc::bad_initial_model: return "bad-initial-model";
    case Errc::stagnation: return "stagnation";
    case Errc::degenerate_fit: return "degenerate-fit";
    case Errc::empty_input: return "empty-input";
    case Errc::parse: return "parse";
    case Errc::io: return "io";
    case Errc::mixed_chord: return "mixed-chord";
    case Errc::unschedulable: return "unschedulable";
    case Errc::nothing_to_store: return "nothing-to-store";
    case Errc::reference_exists: return "reference-exists";
    case Errc::degenerate_timing: return "degenerate-timing";
    case Errc::domain: return "domain";
    case Errc::usage: return "usage";
  }
  return "unknown";
}

Error::Error(Errc code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + " error: " + message), code_(code) {}

ParseError::ParseError(std::size_t line, const std::string& message)
    : Error(Errc::parse, "line " + std::to_string(line) + ": " + message), line_(line) {}

}  // namespace chordfit

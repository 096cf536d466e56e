#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace chordfit {

enum class Errc {
  model_domain,
  width_below_instrument,
  flat_spectrum,
  shape,
  singular_width,
  bad_initial_model,
  stagnation,
  degenerate_fit,
  empty_input,
  parse,
  io,
  mixed_chord,
  unschedulable,
  nothing_to_store,
  reference_exists,
  degenerate_timing,
  domain,
  usage,
};

std::string_view to_string(Errc code);

// All library failures are reported through this type; code() identifies
// the failure class so callers (and the CLI exit-status mapping) can branch
// without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message);
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& message);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace chordfit

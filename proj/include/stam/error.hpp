#pragma once

#include <stdexcept>
#include <string>

namespace stam {

enum class Errc {
  malformed_input,
  empty_input,
  format_error,
  empty_sequence,
  all_missing,
  empty_series,
  degenerate_pose,
  too_short,
  shape_mismatch,
  singular_degree,
  length_mismatch,
  non_finite_loss,
  non_finite_gradient,
  single_class,
  config_invalid,
  file_not_found,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::malformed_input: return "MalformedInput";
    case Errc::empty_input: return "EmptyInput";
    case Errc::format_error: return "FormatError";
    case Errc::empty_sequence: return "EmptySequence";
    case Errc::all_missing: return "AllMissing";
    case Errc::empty_series: return "EmptySeries";
    case Errc::degenerate_pose: return "DegeneratePose";
    case Errc::too_short: return "TooShort";
    case Errc::shape_mismatch: return "ShapeMismatch";
    case Errc::singular_degree: return "SingularDegree";
    case Errc::length_mismatch: return "LengthMismatch";
    case Errc::non_finite_loss: return "NonFiniteLoss";
    case Errc::non_finite_gradient: return "NonFiniteGradient";
    case Errc::single_class: return "SingleClass";
    case Errc::config_invalid: return "ConfigInvalid";
    case Errc::file_not_found: return "FileNotFound";
  }
  return "UnknownError";
}

/// Library-wide exception carrying a stable error code for CLI exit mapping.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool cond, Errc code, const std::string& message) {
  if (!cond) fail(code, message);
}

}  // namespace stam

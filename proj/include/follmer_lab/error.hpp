#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace flab {

enum class ErrorKind {
  invalid_model,
  singular_model,
  domain_error,
  unsupported,
  empty_sample,
  sample_too_small,
  support_mismatch,
  grid_too_coarse,
  closed_form_unavailable,
  step_explosion,
  tail_dominates,
  precondition_unmet,
  negative_eigenvalue,
  non_psd,
  config_error,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_model: return "InvalidModel";
    case ErrorKind::singular_model: return "SingularModel";
    case ErrorKind::domain_error: return "DomainError";
    case ErrorKind::unsupported: return "Unsupported";
    case ErrorKind::empty_sample: return "EmptySample";
    case ErrorKind::sample_too_small: return "SampleTooSmall";
    case ErrorKind::support_mismatch: return "SupportMismatch";
    case ErrorKind::grid_too_coarse: return "GridTooCoarse";
    case ErrorKind::closed_form_unavailable: return "ClosedFormUnavailable";
    case ErrorKind::step_explosion: return "StepExplosion";
    case ErrorKind::tail_dominates: return "TailDominates";
    case ErrorKind::precondition_unmet: return "PreconditionUnmet";
    case ErrorKind::negative_eigenvalue: return "NegativeEigenvalue";
    case ErrorKind::non_psd: return "NonPSD";
    case ErrorKind::config_error: return "ConfigError";
  }
  return "Unknown";
}

/// Single exception type for the library; `kind()` carries the failure class.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  /// Numerical failures map to a distinct CLI exit code from input errors.
  bool is_numerical() const noexcept {
    return kind_ == ErrorKind::tail_dominates || kind_ == ErrorKind::step_explosion ||
           kind_ == ErrorKind::support_mismatch || kind_ == ErrorKind::closed_form_unavailable;
  }

 private:
  ErrorKind kind_;
};

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) throw Error(kind, what);
}

}  // namespace flab

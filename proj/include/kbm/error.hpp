#ifndef KBM_ERROR_HPP
#define KBM_ERROR_HPP

#include <stdexcept>
#include <string>

namespace kbm {

enum class ErrorKind {
  InvalidCutoff,
  InvalidExponent,
  InvalidStep,
  Resolution,
  DimensionMismatch,
  StepFailure,
  NumericalDegeneracy,
  UnsupportedDimension,
  EmptySample,
  HorizonTooShort,
  ConditionViolated,
  DegenerateInput,
  GridMismatch,
  JunctionMismatch,
  InvalidParameter,
  NotPositiveSemidefinite,
  StabilityBound,
  UnknownExperiment,
  Io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidCutoff: return "invalid-cutoff";
    case ErrorKind::InvalidExponent: return "invalid-exponent";
    case ErrorKind::InvalidStep: return "invalid-step";
    case ErrorKind::Resolution: return "resolution";
    case ErrorKind::DimensionMismatch: return "dimension-mismatch";
    case ErrorKind::StepFailure: return "step-failure";
    case ErrorKind::NumericalDegeneracy: return "numerical-degeneracy";
    case ErrorKind::UnsupportedDimension: return "unsupported-dimension";
    case ErrorKind::EmptySample: return "empty-sample";
    case ErrorKind::HorizonTooShort: return "horizon-too-short";
    case ErrorKind::ConditionViolated: return "condition-violated";
    case ErrorKind::DegenerateInput: return "degenerate-input";
    case ErrorKind::GridMismatch: return "grid-mismatch";
    case ErrorKind::JunctionMismatch: return "junction-mismatch";
    case ErrorKind::InvalidParameter: return "invalid-parameter";
    case ErrorKind::NotPositiveSemidefinite: return "not-positive-semidefinite";
    case ErrorKind::StabilityBound: return "stability-bound";
    case ErrorKind::UnknownExperiment: return "unknown-experiment";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

/// Exception carrying a machine-checkable kind next to the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) throw Error(kind, what);
}

}  // namespace kbm

#endif

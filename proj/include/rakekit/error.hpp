#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rakekit {

enum class ErrorCode {
  // table
  DuplicateCell,
  BadWeight,
  ConstraintWithoutValue,
  UnknownColumn,
  MissingCell,
  ParseError,
  EmptyProblem,
  BoundsInvalid,
  InconsistentMargins,
  // loss / linop
  DomainError,
  DimensionMismatch,
  TooLarge,
  // solver
  NonPositiveInput,
  NoConvergence,
  SingularSystem,
  MissingUnrecoverable,
  // uq
  SingularKKT,
  NotConverged,
  DrawSolveFailed,
  IndexOutOfRange,
  Unsupported,
  // cli
  UnknownExperiment,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DuplicateCell: return "DuplicateCell";
    case ErrorCode::BadWeight: return "BadWeight";
    case ErrorCode::ConstraintWithoutValue: return "ConstraintWithoutValue";
    case ErrorCode::UnknownColumn: return "UnknownColumn";
    case ErrorCode::MissingCell: return "MissingCell";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::EmptyProblem: return "EmptyProblem";
    case ErrorCode::BoundsInvalid: return "BoundsInvalid";
    case ErrorCode::InconsistentMargins: return "InconsistentMargins";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::TooLarge: return "TooLarge";
    case ErrorCode::NonPositiveInput: return "NonPositiveInput";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::MissingUnrecoverable: return "MissingUnrecoverable";
    case ErrorCode::SingularKKT: return "SingularKKT";
    case ErrorCode::NotConverged: return "NotConverged";
    case ErrorCode::DrawSolveFailed: return "DrawSolveFailed";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::Unsupported: return "Unsupported";
    case ErrorCode::UnknownExperiment: return "UnknownExperiment";
  }
  return "Unknown";
}

/// Numerical failures (as opposed to bad input) map to a distinct CLI exit code.
constexpr bool is_numerical(ErrorCode code) {
  switch (code) {
    case ErrorCode::NoConvergence:
    case ErrorCode::SingularSystem:
    case ErrorCode::MissingUnrecoverable:
    case ErrorCode::SingularKKT:
    case ErrorCode::NotConverged:
    case ErrorCode::DrawSolveFailed:
      return true;
    default:
      return false;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace rakekit

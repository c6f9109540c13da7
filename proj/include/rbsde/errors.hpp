#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rbsde {

enum class ErrorCode {
  InvalidGrid,
  NoContraction,
  NonConvergence,
  OracleTooLarge,
  BadOrdering,
  NotSupermartingale,
  BadConstants,
  PreconditionFailed,
  NotOptimal,
  PositivityViolated,
  MonotonicityFailed,
  InvalidConfig,
  UnknownCheck,
  ParseError,
};

inline std::string_view code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidGrid: return "GRID_INVALID";
    case ErrorCode::NoContraction: return "NO_CONTRACTION";
    case ErrorCode::NonConvergence: return "NON_CONVERGENCE";
    case ErrorCode::OracleTooLarge: return "ORACLE_TOO_LARGE";
    case ErrorCode::BadOrdering: return "BAD_ORDERING";
    case ErrorCode::NotSupermartingale: return "NOT_SUPERMARTINGALE";
    case ErrorCode::BadConstants: return "BAD_CONSTANTS";
    case ErrorCode::PreconditionFailed: return "PRECONDITION_FAILED";
    case ErrorCode::NotOptimal: return "NOT_OPTIMAL";
    case ErrorCode::PositivityViolated: return "POSITIVITY_VIOLATED";
    case ErrorCode::MonotonicityFailed: return "MONOTONICITY_FAILED";
    case ErrorCode::InvalidConfig: return "CONFIG_INVALID";
    case ErrorCode::UnknownCheck: return "UNKNOWN_CHECK";
    case ErrorCode::ParseError: return "PARSE_ERROR";
  }
  return "UNKNOWN";
}

/// True for errors caused by the caller's input (CLI exit code 2); the rest
/// are numerical or verification failures (exit code 1).
inline bool is_input_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonConvergence:
    case ErrorCode::NotSupermartingale:
    case ErrorCode::NotOptimal:
      return false;
    default:
      return true;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(code_name(code)) + ": " + message),
        code_(code),
        message_(message) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
};

}  // namespace rbsde

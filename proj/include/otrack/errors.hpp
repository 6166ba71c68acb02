#pragma once

#include <stdexcept>
#include <string>

namespace otrack {

/// Machine-readable failure codes surfaced by the library and mapped to CLI
/// exit codes.
enum class ErrorCode {
  SingularGram,
  InsufficientSamples,
  NotLinearizable,
  ShootingSingular,
  IntegratorFailure,
  VanishingB,
  NoDecay,
  NonHyperbolic,
  NotSupported,
  NotTwoDimClass,
  NotMechanicalForm,
  MatchingFailure,
  NewtonDiverged,
  GridMismatch,
  ExpressionParseError,
  ParseError,
  DimensionMismatch,
  HorizonTooShort,
  IoError,
};

inline const char* to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::SingularGram: return "SingularGram";
    case ErrorCode::InsufficientSamples: return "InsufficientSamples";
    case ErrorCode::NotLinearizable: return "NotLinearizable";
    case ErrorCode::ShootingSingular: return "ShootingSingular";
    case ErrorCode::IntegratorFailure: return "IntegratorFailure";
    case ErrorCode::VanishingB: return "VanishingB";
    case ErrorCode::NoDecay: return "NoDecay";
    case ErrorCode::NonHyperbolic: return "NonHyperbolic";
    case ErrorCode::NotSupported: return "NotSupported";
    case ErrorCode::NotTwoDimClass: return "NotTwoDimClass";
    case ErrorCode::NotMechanicalForm: return "NotMechanicalForm";
    case ErrorCode::MatchingFailure: return "MatchingFailure";
    case ErrorCode::NewtonDiverged: return "NewtonDiverged";
    case ErrorCode::GridMismatch: return "GridMismatch";
    case ErrorCode::ExpressionParseError: return "ExpressionParseError";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::HorizonTooShort: return "HorizonTooShort";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

/// CLI exit code convention: 0 success, 2 config error, 3 solver failure,
/// 4 linearizing-assumption failure.
inline int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::ParseError:
    case ErrorCode::DimensionMismatch:
    case ErrorCode::ExpressionParseError:
      return 2;
    case ErrorCode::NotLinearizable:
      return 4;
    default:
      return 3;
  }
}

}  // namespace otrack

#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

namespace spose {

enum class ErrorCode {
  NonPositiveDepth,
  NotARotation,
  NonUnitQuaternion,
  InvalidArgument,
  SizeMismatch,
  DegenerateHeatmap,
  OutOfBounds,
  DegenerateConfiguration,
  TooFewPoints,
  PnPFailure,
  IllConditionedHessian,
  ZeroGroundTruthPosition,
  IdMismatch,
  BudgetExhausted,
  InvalidRange,
  ParseError,
  SchemaViolation,
  IoError,
  PredictorFailure,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::NotARotation: return "NotARotation";
    case ErrorCode::NonUnitQuaternion: return "NonUnitQuaternion";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::SizeMismatch: return "SizeMismatch";
    case ErrorCode::DegenerateHeatmap: return "DegenerateHeatmap";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::PnPFailure: return "PnPFailure";
    case ErrorCode::IllConditionedHessian: return "IllConditionedHessian";
    case ErrorCode::ZeroGroundTruthPosition: return "ZeroGroundTruthPosition";
    case ErrorCode::IdMismatch: return "IdMismatch";
    case ErrorCode::BudgetExhausted: return "BudgetExhausted";
    case ErrorCode::InvalidRange: return "InvalidRange";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::PredictorFailure: return "PredictorFailure";
  }
  return "Unknown";
}

/// Single exception type for the library. The code identifies the failure
/// class; `index` carries the offending element where one exists (point
/// index, iteration number, ...).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what, std::optional<std::size_t> index = std::nullopt)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), index_(index) {}

  ErrorCode code() const noexcept { return code_; }
  std::optional<std::size_t> index() const noexcept { return index_; }

 private:
  ErrorCode code_;
  std::optional<std::size_t> index_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what,
                              std::optional<std::size_t> index = std::nullopt) {
  throw Error(code, what, index);
}

}  // namespace spose

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dflex {

enum class ErrorCode {
  NonFiniteInput,
  InvalidParams,
  EmptyDistrict,
  InvalidBand,
  LengthMismatch,
  MissingColumn,
  RaggedSeries,
  InvariantViolation,
  EmptyTrace,
  NonPsd,
  DimensionMismatch,
  RankDeficient,
  TooFewSamples,
  ForecastTooShort,
  SolverFailed,
  ShapeMismatch,
  NonFiniteGrad,
  NonFiniteObservation,
  BufferUnderflow,
  EmptyRollout,
  ZeroReferenceMean,
  RosterMismatch,
  ConfigParse,
  UnknownController,
  MissingDependency,
  MissingArtifact,
  Io,
  ControllerError,
};

std::string_view to_string(ErrorCode code);

/// Single exception type for the library; `code()` identifies the failure class.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), detail_(what) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }
  /// The message without the code prefix, for rethrowing with added context.
  [[nodiscard]] const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace dflex

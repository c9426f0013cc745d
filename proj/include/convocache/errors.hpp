#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace convocache {

enum class ErrorCode {
  InvalidArgument,
  DimensionMismatch,
  EncoderUnavailable,
  EvaluatorUnavailable,
  GeneratorFailure,
  ScoreOutOfRange,
  GateError,
  IoError,
  FormatError,
  EncodingError,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Base of every exception thrown by the library. The code is stable and
/// is what the CLI and HTTP layers key their exit codes / statuses on.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

#define CONVOCACHE_DEFINE_ERROR(Name)                                   \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& message) : Error(ErrorCode::Name, message) {} \
  };

CONVOCACHE_DEFINE_ERROR(InvalidArgument)
CONVOCACHE_DEFINE_ERROR(DimensionMismatch)
CONVOCACHE_DEFINE_ERROR(EncoderUnavailable)
CONVOCACHE_DEFINE_ERROR(EvaluatorUnavailable)
CONVOCACHE_DEFINE_ERROR(GeneratorFailure)
CONVOCACHE_DEFINE_ERROR(ScoreOutOfRange)
CONVOCACHE_DEFINE_ERROR(IoError)
CONVOCACHE_DEFINE_ERROR(FormatError)
CONVOCACHE_DEFINE_ERROR(EncodingError)

#undef CONVOCACHE_DEFINE_ERROR

/// Raised when the coherence gate is aborted by a failing evaluator.
/// `cause()` keeps the evaluator's own error code.
class GateError : public Error {
 public:
  GateError(ErrorCode cause, const std::string& message)
      : Error(ErrorCode::GateError, message), cause_(cause) {}

  ErrorCode cause() const noexcept { return cause_; }

 private:
  ErrorCode cause_;
};

}  // namespace convocache

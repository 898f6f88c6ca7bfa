#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nola {

enum class ErrorCode {
  MissingFile,
  SchemaViolation,
  EmptyClassList,
  MissingClass,
  ParseError,
  ClientUnavailable,
  PlaceholderMissing,
  RateLimited,
  EmptySplit,
  EmptyInput,
  ShapeMismatch,
  WidthMismatch,
  DegenerateClass,
  DimMismatch,
  InvalidCounts,
  AlignmentMismatch,
  InvalidEpsilon,
  LabelOutOfRange,
  EmptyPseudoSet,
  UntrainedHead,
  UntrainedDL,
  MissingCheckpoint,
  VersionMismatch,
  CorruptFile,
  InvalidConfig,
  Unsupported,
  Locked,
};

std::string_view to_string(ErrorCode code);

/// Base exception for every failure the library reports. The code is the
/// machine-readable part; the message names the offending field or value.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const { return code_; }

 protected:
  struct Verbatim {};
  Error(ErrorCode code, const std::string& message, Verbatim) : std::runtime_error(message), code_(code) {}

 private:
  ErrorCode code_;
};

/// Raised by the pipeline runner; wraps the failing stage's error.
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& inner)
      : Error(inner.code(), "[" + stage + "] " + inner.what(), Verbatim{}), stage_(std::move(stage)) {}

  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace nola

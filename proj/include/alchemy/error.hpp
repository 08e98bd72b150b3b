#pragma once

#include <stdexcept>
#include <string>

namespace alchemy {

// Mirrors alc_status in alchemy.h; values must stay in sync.
enum class ErrorCode : int {
  kInvalidArgument = 1,
  kNotApplicable = 2,
  kGenerationExhausted = 3,
  kParse = 4,
  kIo = 5,
  kInvalidConfig = 6,
  kDivergence = 7,
  kEpisodeTooLong = 8,
  kMissingMetric = 9,
  kIncompatibleKind = 10,
  kMissingOracleContext = 11,
  kShapeMismatch = 12,
  kEmptyPool = 13,
  kInternal = 99,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Raised when a potion is not applicable at a vertex; `step` is the index
/// within a sequence (0 for single applications).
class NotApplicableError : public Error {
 public:
  NotApplicableError(int step, const std::string& what)
      : Error(ErrorCode::kNotApplicable, what), step_(step) {}

  int step() const noexcept { return step_; }

 private:
  int step_;
};

/// Raised by file readers; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(ErrorCode::kParse, "line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace alchemy

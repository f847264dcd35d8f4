#pragma once

#include <stdexcept>
#include <string>

namespace trofi {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unknown names, invalid option values, violated config invariants.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition of an operation does not hold.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Matrix or vector dimensions disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, diverging training, degenerate statistics.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Optimizer received non-finite gradients or a loss became non-finite.
class DivergenceError : public NumericError {
 public:
  using NumericError::NumericError;
};

/// A dataset violates its structural invariants.
class CorruptDatasetError : public Error {
 public:
  using Error::Error;
};

class EmptyDatasetError : public CorruptDatasetError {
 public:
  using CorruptDatasetError::CorruptDatasetError;
};

/// A file could not be parsed. Carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, long line = 0)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  long line() const noexcept { return line_; }

 private:
  long line_;
};

/// A ranking or other input failed validation against its referenced data.
class ValidationError : public Error {
 public:
  ValidationError(const std::string& what, std::string offender = {})
      : Error(what), offender_(std::move(offender)) {}
  const std::string& offender() const noexcept { return offender_; }

 private:
  std::string offender_;
};

/// A ranking was produced for a different dataset.
class StaleRankingError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// A pipeline stage is missing an artifact produced by an earlier stage.
class DependencyError : public Error {
 public:
  DependencyError(const std::string& what, std::string required_command)
      : Error(what), required_command_(std::move(required_command)) {}
  const std::string& required_command() const noexcept {
    return required_command_;
  }

 private:
  std::string required_command_;
};

}  // namespace trofi

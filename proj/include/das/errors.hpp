#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace das {

// Process exit codes used by the CLI.
enum class ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kData = 3,
  kNumerical = 4,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const { return ExitCode::kData; }
};

/// Invalid argument value (ranges, counts, knobs).
class ParameterError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::kUsage; }
};

/// Mismatched vector or matrix dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::kUsage; }
};

/// Malformed or truncated file. Carries the byte offset where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Method and feature mode do not fit together, or a required input is missing.
class ConfigError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::kUsage; }
};

/// Memory budget exceeded (e.g. exact Jacobians too large).
class CapacityError : public Error {
 public:
  using Error::Error;
};

class SingularityError : public Error {
 public:
  SingularityError(const std::string& what, double smallest_pivot)
      : Error(what), smallest_pivot_(smallest_pivot) {}
  double smallest_pivot() const { return smallest_pivot_; }
  ExitCode exit_code() const override { return ExitCode::kNumerical; }

 private:
  double smallest_pivot_;
};

class TrainingDivergedError : public Error {
 public:
  TrainingDivergedError(const std::string& what, std::int64_t step)
      : Error(what), step_(step) {}
  std::int64_t step() const { return step_; }
  ExitCode exit_code() const override { return ExitCode::kNumerical; }

 private:
  std::int64_t step_;
};

/// Correlation of a constant sequence.
class UndefinedCorrelationError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::kNumerical; }
};

}  // namespace das

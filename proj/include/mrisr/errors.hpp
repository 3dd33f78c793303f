#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mrisr {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad arguments, shapes or configuration. CLI exit code 1.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failure. CLI exit code 2.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A file exists but its contents are inconsistent.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

class UnsupportedFormatError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Non-finite loss during training. CLI exit code 3.
class DivergenceError : public Error {
 public:
  DivergenceError(std::int64_t step, const std::string& what)
      : Error("diverged at step " + std::to_string(step) + ": " + what), step_(step) {}
  std::int64_t step() const { return step_; }

 private:
  std::int64_t step_;
};

/// Raised when a create-graph backward pass meets an op whose backward is not itself recorded.
class NoDoubleBackwardError : public Error {
 public:
  explicit NoDoubleBackwardError(const std::string& op)
      : Error("no double-backward for op '" + op + "'"), op_(op) {}
  const std::string& op() const { return op_; }

 private:
  std::string op_;
};

class NondeterminismError : public Error {
 public:
  using Error::Error;
};

}  // namespace mrisr

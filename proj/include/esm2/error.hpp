// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace esm2 {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad configuration, shapes, arguments or incompatible artifacts.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Malformed or label-inconsistent dataset content.
class DataError : public ValidationError {
 public:
  explicit DataError(const std::string& what, std::size_t line = 0)
      : ValidationError(line == 0 ? what
                                  : "line " + std::to_string(line) + ": " + what),
        line_(line) {}

  /// 1-based line number in the source file, 0 when not file-backed.
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class CalibrationError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class VersionMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace esm2

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace stereodet {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input: bad file contents, wrong shapes, invalid arguments.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Text parse failure; carries the 1-based line number (0 when not line-bound).
class ParseError : public InputError {
 public:
  ParseError(const std::string& what, int line)
      : InputError(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

class ShapeError : public InputError {
 public:
  using InputError::InputError;
};

class ChecksumError : public InputError {
 public:
  using InputError::InputError;
};

class MissingTensorError : public InputError {
 public:
  MissingTensorError(const std::string& name)
      : InputError("missing tensor '" + name + "'"), name_(name) {}
  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
};

class WeightShapeError : public InputError {
 public:
  using InputError::InputError;
};

/// A result violated a numeric or structural invariant (NaN in a head,
/// degenerate calibration, empty evaluation set, ...).
class InvariantError : public Error {
 public:
  using Error::Error;
};

}  // namespace stereodet

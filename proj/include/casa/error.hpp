#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace casa {

/// Broad failure class. The CLI maps each to an exit code.
enum class ErrorKind {
  usage,      // bad flag or out-of-range parameter
  data,       // malformed or inconsistent input data
  numerical,  // factorization failure
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Out-of-range hyperparameter or operation argument.
class ParameterError : public Error {
 public:
  explicit ParameterError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

/// Config field outside its documented range. `field()` names the key.
class ValidationError : public ParameterError {
 public:
  ValidationError(std::string field, const std::string& what)
      : ParameterError(what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorKind::data, what) {}
};

/// Non-finite, negative or otherwise contract-violating values.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::data, what) {}
};

/// Malformed array file; `offset()` is the byte position of the problem.
class FormatError : public Error {
 public:
  FormatError(std::size_t offset, const std::string& what)
      : Error(ErrorKind::data, what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class UnsupportedDtypeError : public FormatError {
 public:
  UnsupportedDtypeError(std::size_t offset, const std::string& descr)
      : FormatError(offset, "unsupported dtype '" + descr + "', expected '<f4' or '<f8'") {}
};

class LengthMismatchError : public Error {
 public:
  LengthMismatchError(std::size_t expected, std::size_t actual)
      : Error(ErrorKind::data, "payload length mismatch: expected " + std::to_string(expected) +
                                   " bytes, found " + std::to_string(actual)) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

}  // namespace casa

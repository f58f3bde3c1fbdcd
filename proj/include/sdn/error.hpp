#pragma once

#include <stdexcept>
#include <string>

namespace sdn {

// Root of every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or parameter shapes that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A NetworkSpec, stage config or augmentation config that violates its invariants.
class SpecError : public Error {
 public:
  using Error::Error;
};

// Files that exist but cannot be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

// Text that does not follow its grammar. Carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

class HeaderError : public ParseError {
 public:
  using ParseError::ParseError;
};
class CountMismatchError : public ParseError {
 public:
  using ParseError::ParseError;
};
class NumberError : public ParseError {
 public:
  using ParseError::ParseError;
};

// Semantic failures in otherwise well-formed data: duplicate ids,
// non-involutive permutations, degenerate faces.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Weight files.
class FormatError : public Error {
 public:
  using Error::Error;
};
class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};
class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};
class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};
class SpecMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Non-finite loss during training.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace sdn

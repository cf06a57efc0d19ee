#pragma once

#include <stdexcept>
#include <string>

namespace tapd {

// Base for every error raised by the library. The CLI maps subclasses to
// process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not satisfy an operation's shape rule.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Argument outside its documented domain (bad index, eps <= 0, ...).
class ValueError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration document or flag combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// On-disk data is malformed: bad magic, version, truncation, checksum.
class FormatError : public Error {
 public:
  using Error::Error;
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

// A prerequisite artifact (checkpoint, dataset) is missing.
class DependencyError : public Error {
 public:
  using Error::Error;
};

}  // namespace tapd

#pragma once

#include <stdexcept>
#include <string>

namespace mmsa {

// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or dimension mismatch between tensors; messages name both shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Index or slice range outside the valid extent.
class IndexError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value (negative dims, odd model width, bad rates).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Violated API precondition (non-scalar loss, mode mismatch, empty batch).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Bad payload values: scores out of range, non-finite features, bad labels.
class DataError : public Error {
 public:
  using Error::Error;
};

// Malformed file container: wrong magic, unsupported version, bad layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

// File shorter than its header promises; messages name the byte offset.
class LengthError : public FormatError {
 public:
  using FormatError::FormatError;
};

// NaN or Inf produced by a forward or backward computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Filesystem failures: unreadable path, failed write.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mmsa

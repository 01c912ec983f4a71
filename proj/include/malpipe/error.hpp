#pragma once

#include <stdexcept>
#include <string>

namespace malpipe {

// Base class for all library errors. Subclasses map onto CLI exit codes:
// ConfigError -> 2, DataError -> 3, NumericError -> 4, IoError/FormatError -> 5.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dimension or width mismatch between operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value or parameter out of its allowed range.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Numerical failure: non-convergence, non-SPD pivot, training divergence.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Bad input data: ingestion problems, empty classes, schema mismatches.
class DataError : public Error {
 public:
  using Error::Error;
};

// Filesystem-level failure.
class IoError : public Error {
 public:
  using Error::Error;
};

// Container-format failure: bad magic, unsupported version, corruption.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace malpipe

#pragma once

#include <stdexcept>

namespace idlora {

// Base class for every error thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Operand dimensions do not line up.
struct ShapeError : Error {
  using Error::Error;
};

// A scalar argument is outside its valid range (includes non-finite input).
struct ParameterError : Error {
  using Error::Error;
};

// The requested constraints cannot be satisfied (e.g. k * min_size > n).
struct ConstraintError : Error {
  using Error::Error;
};

// A cluster cannot supply as many rows as requested.
struct CapacityError : ConstraintError {
  using ConstraintError::ConstraintError;
};

// An index is outside its valid range.
struct IndexError : Error {
  using Error::Error;
};

// Invalid configuration: divisibility violations, unknown methods, ...
struct ConfigError : Error {
  using Error::Error;
};

// Malformed serialized data (bad magic, version, truncation, non-finite payload).
struct FormatError : Error {
  using Error::Error;
};

// Filesystem failure while reading or writing artifacts.
struct IoError : Error {
  using Error::Error;
};

// Optimization produced a non-finite loss.
struct TrainingError : Error {
  using Error::Error;
};

}  // namespace idlora

#pragma once

#include <stdexcept>
#include <string>

namespace dialectid {

// Exception taxonomy. The CLI maps each class onto an exit code:
// ConfigError -> 2, DataError -> 3, everything else -> 4.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration, flag value or usage.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input data or a model file is unusable: malformed manifest rows,
/// unreadable files, dimension mismatches between model and input.
class DataError : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public DataError {
 public:
  using DataError::DataError;
};

/// Raised from long-running loops once an interrupt signal was received.
class Interrupted : public Error {
 public:
  Interrupted() : Error("interrupted") {}
};

}  // namespace dialectid

#pragma once

#include <stdexcept>
#include <string>

namespace tslm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or index bounds violated by an operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Malformed input files, schema violations, inconsistent grids.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid run or model configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values in losses or gradients.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace tslm

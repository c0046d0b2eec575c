#pragma once

#include <stdexcept>
#include <string>

namespace rfnet {

/// Base class for every error raised by the library. The CLI maps any of
/// these to a nonzero exit status.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor dimensions do not satisfy an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value detected (debug checks) or NaN training loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Label, dataset id or sample content violates the data contract.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid model / run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// API misuse (e.g. backward on a non-scalar, epoch out of range).
class ContractError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace rfnet

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace privdistil {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration, schema violation or unsupported option.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Missing, unreadable or malformed data on disk (manifests, images, ground truth).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Argument outside an operation's domain (too few samples, zero-norm rows, bad ranges).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Shape or size mismatch between arguments.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A loss or gradient became non-finite during optimisation.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, int64_t step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}

  int64_t step() const noexcept { return step_; }

 private:
  int64_t step_;
};

/// Checkpoint file that is truncated, has a bad magic or an unsupported version.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

}  // namespace privdistil

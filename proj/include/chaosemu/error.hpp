#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace chaosemu {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or violated precondition on user-supplied parameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Operand shapes do not conform for a primitive.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// File-system or serialization failure.
class IoError : public Error {
 public:
  using Error::Error;
};

class VersionMismatchError : public IoError {
 public:
  using IoError::IoError;
};

class ShapeMismatchError : public IoError {
 public:
  using IoError::IoError;
};

class TruncatedFileError : public IoError {
 public:
  using IoError::IoError;
};

/// A numerical integration or rollout produced a non-finite state.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::int64_t step, std::int64_t env_id = -1)
      : Error(what + " (step " + std::to_string(step) +
              (env_id >= 0 ? ", env " + std::to_string(env_id) : std::string()) + ")"),
        step_(step),
        env_id_(env_id) {}

  std::int64_t step() const noexcept { return step_; }
  std::int64_t env_id() const noexcept { return env_id_; }

 private:
  std::int64_t step_;
  std::int64_t env_id_;
};

/// An optimizer parameter had no gradient after the backward pass.
class MissingGradientError : public Error {
 public:
  using Error::Error;
};

/// A numeric input (cost matrix, statistics) contained NaN.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace chaosemu

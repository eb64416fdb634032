#pragma once

#include <stdexcept>
#include <string>

namespace chno {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Tensor / field dimensions do not fit the operation.
class ShapeError : public Error {
public:
  using Error::Error;
};

/// Invalid configuration or parameter value.
class ConfigError : public Error {
public:
  using Error::Error;
};

/// Time integration produced non-finite values.
class IntegrationError : public Error {
public:
  IntegrationError(const std::string &what, long step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  long step() const noexcept { return step_; }

private:
  long step_;
};

/// A metric is undefined for its input (e.g. zero reference norm).
class MetricError : public Error {
public:
  using Error::Error;
};

/// Autoregressive prediction produced non-finite values.
class RolloutError : public Error {
public:
  RolloutError(const std::string &what, int window)
      : Error(what + " (window " + std::to_string(window) + ")"), window_(window) {}
  int window() const noexcept { return window_; }

private:
  int window_;
};

/// Training loss became non-finite.
class DivergenceError : public Error {
public:
  DivergenceError(int epoch, int batch)
      : Error("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
              std::to_string(batch)),
        epoch_(epoch), batch_(batch) {}
  int epoch() const noexcept { return epoch_; }
  int batch() const noexcept { return batch_; }

private:
  int epoch_;
  int batch_;
};

class IoError : public Error {
public:
  using Error::Error;
};

class FormatError : public IoError {
public:
  using IoError::IoError;
};

class VersionError : public IoError {
public:
  using IoError::IoError;
};

class ChecksumError : public IoError {
public:
  using IoError::IoError;
};

class MissingFileError : public IoError {
public:
  using IoError::IoError;
};

} // namespace chno

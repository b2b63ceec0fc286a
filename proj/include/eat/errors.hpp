#pragma once

#include <stdexcept>
#include <string>

namespace eat {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor/layer dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration values (bad hyperparameters, malformed specs, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// An operation produced NaN/Inf.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

// Filesystem / serialization failures.
class IoError : public Error {
 public:
  using Error::Error;
};

// Training loss became non-finite; carries where it happened.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int epoch, int batch)
      : Error("diverged at epoch " + std::to_string(epoch) + ", batch " +
              std::to_string(batch) + ": " + what),
        epoch(epoch),
        batch(batch) {}

  int epoch = -1;
  int batch = -1;
};

}  // namespace eat

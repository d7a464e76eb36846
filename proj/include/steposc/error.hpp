#pragma once

#include <stdexcept>
#include <string>

namespace steposc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Energy at or below the potential minimum: the level set is empty.
class NoClassicalMotion : public Error {
 public:
  using Error::Error;
};

/// The level set does not reach the wall, so wall angle/action are undefined.
class NoImpact : public Error {
 public:
  using Error::Error;
};

/// Trajectory hit both step walls at once.
class CornerCollision : public Error {
 public:
  explicit CornerCollision(double t)
      : Error("trajectory hit the step corner at t=" + std::to_string(t)), time(t) {}
  double time;
};

/// Argument outside the domain an operation is defined on.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Grid would not fit the memory budget.
class SizingError : public Error {
 public:
  using Error::Error;
};

/// Bad or inconsistent input data (files, grids).
class IngestionError : public Error {
 public:
  using Error::Error;
};

/// Experiment configuration failed validation; `path` names the offending field.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field + ": " + what), path(std::move(field)) {}
  std::string path;
};

}  // namespace steposc

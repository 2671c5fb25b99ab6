#pragma once

#include <stdexcept>
#include <string>

namespace ubct {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An invalid configuration value. `field()` names the offending field.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what);
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf, singular solves, degenerate normalizations.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class AllocationError : public Error {
 public:
  using Error::Error;
};

/// A label has no row in the prototype matrix it is scored against.
class CoverageError : public Error {
 public:
  using Error::Error;
};

/// A loss was requested on a data split it cannot be defined for.
class InapplicableError : public Error {
 public:
  using Error::Error;
};

class BatchCompositionError : public Error {
 public:
  using Error::Error;
};

/// Loss with an empty negative sum (a single class).
class UndefinedLossError : public Error {
 public:
  using Error::Error;
};

/// Graph construction on a class with fewer than two vertices.
class SingletonClassError : public Error {
 public:
  using Error::Error;
};

class IncompatibleArchitectureError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Wraps an error raised inside a pipeline stage with the stage name.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what);
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace ubct

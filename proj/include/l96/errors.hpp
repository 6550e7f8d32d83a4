#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace l96 {

// Base of every error thrown by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

// A non-finite value appeared while integrating. `step` is the index of the
// offending step (0 when not tied to a trajectory).
class BlowUpError : public Error {
 public:
  BlowUpError(const std::string& what, std::size_t step = 0, double time = 0.0)
      : Error(what), step_(step), time_(time) {}

  std::size_t step() const { return step_; }
  double time() const { return time_; }

 private:
  std::size_t step_;
  double time_;
};

}  // namespace l96

#pragma once

#include <stdexcept>
#include <string>

namespace fieldqc {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input parsing and data model.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};
class DuplicatePlotError : public Error { using Error::Error; };
class EmptyTrialError : public Error { using Error::Error; };
class InvalidCoordError : public Error { using Error::Error; };
class ShapeMismatchError : public Error { using Error::Error; };
class InvalidVertexError : public Error { using Error::Error; };

// Model fitting.
class ParamError : public Error { using Error::Error; };
class NumericalError : public Error { using Error::Error; };
class InsufficientDataError : public Error { using Error::Error; };
class DegenerateDataError : public Error { using Error::Error; };
class DesignError : public Error { using Error::Error; };
class ConvergenceError : public Error { using Error::Error; };

// Configuration and simulation.
class ConfigError : public Error { using Error::Error; };
class SimulationError : public Error {
 public:
  SimulationError(const std::string& what, int trial_index = -1)
      : Error(trial_index < 0 ? what : "trial " + std::to_string(trial_index) + ": " + what),
        trial_index_(trial_index) {}
  int trial_index() const noexcept { return trial_index_; }

 private:
  int trial_index_;
};

}  // namespace fieldqc

#pragma once

#include <stdexcept>
#include <string>

namespace ehrmamba {

// Base of every error thrown by the library. The CLI maps the concrete type
// onto a process exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data: parse failures, orphan events,
// duplicate vocabulary entries, degenerate splits, malformed sequences.
class DataError : public Error {
 public:
  using Error::Error;
};

// Tensor shape or index contract violated.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, unstable parameters, divergence during training.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Invalid argument to an operation (bad step count, bad schedule, bad label).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Configuration file or command-line problem.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Checkpoint or serialized-file format problem.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace ehrmamba

#pragma once

#include <stdexcept>
#include <string>

namespace pegnn {

/// Base class for every error raised by the library. The CLI maps each
/// subclass onto a fixed process exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or unparsable configuration (exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File system or format failure (exit code 3).
class IoError : public Error {
 public:
  using Error::Error;
};

/// Training diverged or produced a non-finite loss (exit code 4).
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint does not match the model configuration (exit code 5).
class CompatibilityError : public Error {
 public:
  using Error::Error;
};

/// Tensor shapes disagree inside a differentiable primitive.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Simulation hit a singular pair interaction.
class DegenerateConfigurationError : public Error {
 public:
  DegenerateConfigurationError(int i, int j, const std::string& what)
      : Error(what), first(i), second(j) {}
  int first;
  int second;
};

}  // namespace pegnn

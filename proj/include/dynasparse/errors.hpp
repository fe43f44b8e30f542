#pragma once

#include <stdexcept>
#include <string>

namespace dynasparse {

// Invalid argument to a library operation (bad threshold, bad dims, ...).
class ParameterError : public std::invalid_argument {
 public:
  explicit ParameterError(const std::string& msg) : std::invalid_argument(msg) {}
};

// A numeric evaluation produced a non-finite value.
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dataset / model file problems: version or dimension mismatch, truncation.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace dynasparse

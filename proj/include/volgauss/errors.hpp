#pragma once

#include <stdexcept>
#include <string>

namespace volgauss {

/// Bad input: files, configs, preconditions. Maps to CLI exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values or divergence. Maps to CLI exit code 2.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace volgauss

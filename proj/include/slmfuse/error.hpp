#pragma once

#include <stdexcept>
#include <string>

namespace slmfuse {

// Bad input, bad configuration, malformed files. Maps to CLI exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values, failed gradient checks. Maps to CLI exit code 2.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace slmfuse

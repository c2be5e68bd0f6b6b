#pragma once

#include <stdexcept>
#include <string>

namespace ggmtl {

// Precondition or input-format violation. The CLI maps this to exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A numerical routine failed (non-convergence, singular system, broken
// identity). The CLI maps this to exit code 2.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ggmtl

#pragma once

#include <stdexcept>
#include <string>

namespace inffor {

// Bad configuration, preconditions, or file formats. The CLI maps this to exit code 2.
class config_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numerical failure: solver divergence, degenerate scale, non-finite loss.
// The CLI maps this to exit code 3.
class numeric_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace inffor

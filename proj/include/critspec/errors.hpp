#pragma once

#include <stdexcept>
#include <string>

namespace critspec {

/// Bad shapes, indices or arguments supplied by the caller.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid or unreadable configuration / input data. Maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numerical routine failed (non-finite values, no convergence). Maps to
/// CLI exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An iterative method ran out of iterations. Carries the best estimate seen.
class ConvergenceError : public NumericalError {
 public:
  ConvergenceError(const std::string& what, double best_estimate)
      : NumericalError(what), best_estimate_(best_estimate) {}

  double best_estimate() const noexcept { return best_estimate_; }

 private:
  double best_estimate_;
};

}  // namespace critspec

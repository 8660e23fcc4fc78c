#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "critspec/errors.hpp"

namespace critspec {

/// Gauss-Hermite rule normalized against the standard Gaussian measure:
/// sum_k weights[k] * f(nodes[k]) ~= E[f(Z)], Z ~ N(0, 1).
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
  int order = 0;

  /// Builds the order-n rule. Nodes are exactly antisymmetric and paired
  /// weights exactly equal.
  static QuadratureRule gauss_hermite(int order);
};

/// Shared default rule (order 64).
const QuadratureRule& default_rule();

/// Approximates the integral of f(sqrt(q) h) against the standard Gaussian
/// measure. Throws NumericalError naming the offending node if f is not
/// finite there.
template <class F>
double gauss_expect(F&& f, double q, const QuadratureRule& rule = default_rule()) {
  if (!(q > 0.0)) throw ShapeError("gauss_expect: variance q must be positive");
  if (rule.order < 2) throw ShapeError("gauss_expect: rule order must be >= 2");
  const double scale = std::sqrt(q);
  double acc = 0.0;
  for (int k = 0; k < rule.order; ++k) {
    const double x = scale * rule.nodes[k];
    const double value = f(x);
    if (!std::isfinite(value))
      throw NumericalError("gauss_expect: integrand not finite at node " + std::to_string(k) +
                           " (h = " + std::to_string(rule.nodes[k]) + ")");
    acc += rule.weights[k] * value;
  }
  return acc;
}

}  // namespace critspec

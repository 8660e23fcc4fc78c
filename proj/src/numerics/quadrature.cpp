#include "critspec/numerics/quadrature.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>

namespace critspec {

namespace {

// Orthonormal probabilists' Hermite recurrence:
//   p_{k+1}(x) = (x p_k(x) - sqrt(k) p_{k-1}(x)) / sqrt(k + 1),  p_0 = 1.
// Returns p_n(x), p_{n-1}(x) and the Christoffel sum sum_{k<n} p_k(x)^2.
struct HermiteEval {
  long double pn, pn1, christoffel;
};

HermiteEval eval_hermite(int n, long double x) {
  long double prev = 0.0L, cur = 1.0L, sum = 1.0L;
  for (int k = 0; k < n; ++k) {
    const long double next = (x * cur - std::sqrt(static_cast<long double>(k)) * prev) /
                             std::sqrt(static_cast<long double>(k + 1));
    prev = cur;
    cur = next;
    if (k + 1 < n) sum += cur * cur;
  }
  return {cur, prev, sum};
}

}  // namespace

QuadratureRule QuadratureRule::gauss_hermite(int order) {
  if (order < 2) throw ShapeError("gauss_hermite: order must be >= 2");

  // Golub-Welsch for starting values, then Newton polish in long double.
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(order, order);
  for (int k = 1; k < order; ++k) {
    jacobi(k, k - 1) = std::sqrt(static_cast<double>(k));
    jacobi(k - 1, k) = jacobi(k, k - 1);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) throw NumericalError("gauss_hermite: eigen solve failed");

  std::vector<long double> x(order), w(order);
  for (int i = 0; i < order; ++i) {
    long double xi = eig.eigenvalues()(i);
    for (int it = 0; it < 8; ++it) {
      const HermiteEval e = eval_hermite(order, xi);
      // p_n'(x) = sqrt(n) p_{n-1}(x)
      const long double step = e.pn / (std::sqrt(static_cast<long double>(order)) * e.pn1);
      xi -= step;
      if (std::fabs(step) < 1e-19L * std::max(1.0L, std::fabs(xi))) break;
    }
    x[i] = xi;
    w[i] = 1.0L / eval_hermite(order, xi).christoffel;
  }

  // Exact symmetry: pair node i with node order-1-i.
  QuadratureRule rule;
  rule.order = order;
  rule.nodes.resize(order);
  rule.weights.resize(order);
  long double total = 0.0L;
  for (int i = 0; i < order; ++i) total += w[i];
  for (int i = 0; i < order / 2; ++i) {
    const int j = order - 1 - i;
    const long double node = 0.5L * (x[j] - x[i]);
    const long double weight = 0.5L * (w[i] + w[j]) / total;
    rule.nodes[i] = static_cast<double>(-node);
    rule.nodes[j] = static_cast<double>(node);
    rule.weights[i] = rule.weights[j] = static_cast<double>(weight);
  }
  if (order % 2 == 1) {
    rule.nodes[order / 2] = 0.0;
    rule.weights[order / 2] = static_cast<double>(w[order / 2] / total);
  }
  return rule;
}

const QuadratureRule& default_rule() {
  static const QuadratureRule rule = QuadratureRule::gauss_hermite(64);
  return rule;
}

}  // namespace critspec

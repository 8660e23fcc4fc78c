#pragma once

#include "critspec/network.hpp"
#include "critspec/numerics/quadrature.hpp"
#include "critspec/numerics/rng.hpp"

namespace critspec {

/// Weight/bias scales with their mean-field fixed point q* and the
/// per-layer mean squared singular value chi of D W.
struct MeanFieldSolution {
  double sigma_w = 1.0;
  double sigma_b = 0.0;
  double q_star = 0.0;
  double chi = 1.0;
  bool critical = false;
};

/// q' = sigma_w^2 E[phi(sqrt(q) h)^2] + sigma_b^2.
double variance_recursion_step(double q_prev, const MeanFieldSolution& sol, Activation activation,
                               const QuadratureRule& rule = default_rule());

struct FixedPointResult {
  double q_star = 0.0;
  /// True when the only attracting fixed point is q* = 0 (sigma_b = 0 and
  /// the map is not expanding at the origin).
  bool degenerate = false;
  int iterations = 0;
};

/// Plain fixed-point iteration until |q_{t+1} - q_t| < 1e-12 or 1e4 steps.
/// Throws ConvergenceError (carrying the last iterate) on failure.
FixedPointResult solve_fixed_point(const MeanFieldSolution& sol, Activation activation, double q_init,
                                   const QuadratureRule& rule = default_rule());

/// sigma_w^2 E[phi'(sqrt(q*) h)^2].
double chi(const MeanFieldSolution& sol, Activation activation, const QuadratureRule& rule = default_rule());

struct CriticalResiduals {
  double fixed_point = 0.0;  ///< variance_recursion_step(q*) - q*
  double chi = 0.0;          ///< chi - 1
};

CriticalResiduals critical_residuals(const MeanFieldSolution& sol, Activation activation,
                                     const QuadratureRule& rule = default_rule());

/// Finds (sigma_w, sigma_b) putting the fixed point at q_star_target with
/// chi = 1. Damped Newton on (sigma_w, sigma_b^2) with a numerical Jacobian,
/// falling back to bisection on sigma_w. Identity activation returns (1, 0).
/// Throws NumericalError if no solution lies in sigma_w in [0.5, 3],
/// sigma_b^2 in [0, q*].
MeanFieldSolution solve_critical(double q_star_target, Activation activation,
                                 const QuadratureRule& rule = default_rule());

/// E[phi(h)] for h ~ N(0, q*).
double mean_activation(const MeanFieldSolution& sol, Activation activation,
                       const QuadratureRule& rule = default_rule());

enum class WeightInit { gaussian, orthogonal };

std::string to_string(WeightInit init);
WeightInit parse_weight_init(const std::string& name);

/// n x p weights. Gaussian: iid N(0, sigma_w^2 / p). Orthogonal: Haar via QR
/// of a standard Gaussian matrix with diag(R) > 0, scaled by sigma_w;
/// requires n >= p.
Matrix sample_weights(int n, int p, WeightInit kind, double sigma_w, Rng& rng);

/// Q factor of a thin QR with the diag(R) > 0 sign convention. Throws
/// NumericalError if m is rank deficient.
Matrix orthonormal_factor(const Matrix& m);

/// ||x||^2 that makes q^1 = q* for a first layer of width n1.
double input_norm_squared_target(const MeanFieldSolution& sol, int n1);

/// Rescales x0 so that q^1 = sigma_w^2 ||x||^2 / n1 + sigma_b^2 equals q*.
Vector rescale_input(const Vector& x0, const MeanFieldSolution& sol, int n1);

}  // namespace critspec

#pragma once

#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "critspec/numerics/rng.hpp"

namespace critspec {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// How mean_square_sv is normalized.
enum class MeanSquareConvention {
  per_singular_value,  ///< divide by min(rows, cols)
  per_row,             ///< divide by rows (output dimension), the chi convention
};

struct SpectralSummary {
  double sigma_max = 0.0;
  double sigma_min = 0.0;
  double mean_square_sv = 0.0;
  /// Sorted descending; empty unless requested.
  std::vector<double> spectrum;
};

SpectralSummary spectral_summary(const Matrix& m, bool keep_spectrum = false,
                                 MeanSquareConvention convention = MeanSquareConvention::per_singular_value);

/// Largest singular value only (same decomposition, no summary bookkeeping).
double spectral_norm(const Matrix& m);

/// Eigenvalues of a symmetric matrix, sorted descending.
std::vector<double> symmetric_eigenvalues(const Matrix& m);

double dense_max_eig(const Matrix& symmetric);

/// y = A x for a symmetric operator of the given dimension.
using LinearOperator = std::function<void(const Vector& x, Vector& y)>;

struct PowerIterationOptions {
  double tol = 1e-8;
  int max_iter = 1000;
};

/// Largest eigenvalue of a symmetric PSD operator by power iteration with a
/// Rayleigh-quotient stopping rule. Restarts once from a fresh random vector
/// if half the budget passes without convergence. Throws ConvergenceError
/// carrying the best Rayleigh quotient seen.
double power_iteration_max_eig(const LinearOperator& apply, Eigen::Index dim, const PowerIterationOptions& options,
                               RngStream rng);

/// Spectral norm of a symmetric (possibly indefinite) operator, via power
/// iteration on its square.
double symmetric_operator_norm(const LinearOperator& apply, Eigen::Index dim, const PowerIterationOptions& options,
                               RngStream rng);

/// Operators above this dimension are never densified.
inline constexpr Eigen::Index kDenseEigenLimit = 4096;

}  // namespace critspec

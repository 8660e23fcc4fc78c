#include "critspec/numerics/spectral.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "critspec/errors.hpp"

namespace critspec {

namespace {

Vector singular_values(const Matrix& m) {
  if (!m.allFinite()) throw NumericalError("spectral_summary: matrix has non-finite entries");
  if (m.rows() == 0 || m.cols() == 0) return Vector();
  if (std::min(m.rows(), m.cols()) <= 32) {
    Eigen::JacobiSVD<Matrix> svd(m);
    if (svd.info() != Eigen::Success) throw NumericalError("spectral_summary: SVD did not converge");
    return svd.singularValues();
  }
  Eigen::BDCSVD<Matrix> svd(m);
  if (svd.info() != Eigen::Success) throw NumericalError("spectral_summary: SVD did not converge");
  return svd.singularValues();
}

}  // namespace

SpectralSummary spectral_summary(const Matrix& m, bool keep_spectrum, MeanSquareConvention convention) {
  const Vector sv = singular_values(m);
  SpectralSummary out;
  if (sv.size() == 0) return out;
  out.sigma_max = sv(0);
  out.sigma_min = sv(sv.size() - 1);
  const double denom =
      convention == MeanSquareConvention::per_row ? static_cast<double>(m.rows()) : static_cast<double>(sv.size());
  out.mean_square_sv = sv.squaredNorm() / denom;
  if (keep_spectrum) out.spectrum.assign(sv.data(), sv.data() + sv.size());
  return out;
}

double spectral_norm(const Matrix& m) {
  const Vector sv = singular_values(m);
  return sv.size() == 0 ? 0.0 : sv(0);
}

std::vector<double> symmetric_eigenvalues(const Matrix& m) {
  if (m.rows() != m.cols()) throw ShapeError("symmetric_eigenvalues: matrix not square");
  if (!m.allFinite()) throw NumericalError("symmetric_eigenvalues: non-finite entries");
  if (m.rows() == 0) return {};
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) throw NumericalError("symmetric_eigenvalues: eigen solve failed");
  std::vector<double> values(eig.eigenvalues().data(), eig.eigenvalues().data() + m.rows());
  std::sort(values.begin(), values.end(), std::greater<>());
  return values;
}

double dense_max_eig(const Matrix& symmetric) {
  const auto values = symmetric_eigenvalues(symmetric);
  return values.empty() ? 0.0 : values.front();
}

double power_iteration_max_eig(const LinearOperator& apply, Eigen::Index dim, const PowerIterationOptions& options,
                               RngStream rng) {
  if (dim <= 0) throw ShapeError("power_iteration_max_eig: dimension must be positive");
  if (!(options.tol > 0.0)) throw ShapeError("power_iteration_max_eig: tol must be positive");

  Rng gen(rng);
  Vector v = gen.normal_vector(dim);
  v.normalize();
  Vector av(dim);

  double best = 0.0;
  double previous = -1.0;
  bool restarted = false;
  const double residual_tol = std::sqrt(options.tol);

  for (int it = 0; it < options.max_iter; ++it) {
    apply(v, av);
    const double rayleigh = v.dot(av);
    if (!std::isfinite(rayleigh)) throw NumericalError("power_iteration_max_eig: operator produced non-finite values");
    best = std::max(best, rayleigh);

    const double norm = av.norm();
    if (norm == 0.0) return 0.0;  // v in the null space; operator is zero along every iterate
    const double residual = (av - rayleigh * v).norm();
    if (previous >= 0.0 && std::abs(rayleigh - previous) <= options.tol * std::abs(rayleigh) &&
        residual <= residual_tol * std::abs(rayleigh))
      return rayleigh;
    if (residual <= 1e-14 * norm) return rayleigh;  // exact eigenvector

    previous = rayleigh;
    v = av / norm;

    if (!restarted && it == options.max_iter / 2) {
      restarted = true;
      v = gen.normal_vector(dim).normalized();
      previous = -1.0;
    }
  }
  throw ConvergenceError("power_iteration_max_eig: no convergence within max_iter", best);
}

double symmetric_operator_norm(const LinearOperator& apply, Eigen::Index dim, const PowerIterationOptions& options,
                               RngStream rng) {
  Vector tmp(dim);
  LinearOperator squared = [&](const Vector& x, Vector& y) {
    apply(x, tmp);
    apply(tmp, y);
  };
  const double lambda = power_iteration_max_eig(squared, dim, options, rng);
  return std::sqrt(std::max(lambda, 0.0));
}

}  // namespace critspec

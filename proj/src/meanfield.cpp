#include "critspec/meanfield.hpp"

#include <array>
#include <cmath>

#include <Eigen/QR>

#include "critspec/errors.hpp"

namespace critspec {

namespace {

double second_moment(double q, Activation activation, const QuadratureRule& rule) {
  if (activation == Activation::identity) return q;
  return gauss_expect([](double h) { return std::tanh(h) * std::tanh(h); }, q, rule);
}

double derivative_second_moment(double q, Activation activation, const QuadratureRule& rule) {
  if (activation == Activation::identity) return 1.0;
  return gauss_expect(
      [](double h) {
        const double d = activate_derivative(Activation::tanh, h);
        return d * d;
      },
      q, rule);
}

}  // namespace

double variance_recursion_step(double q_prev, const MeanFieldSolution& sol, Activation activation,
                               const QuadratureRule& rule) {
  if (!(q_prev > 0.0)) throw ShapeError("variance_recursion_step: q must be positive");
  return sol.sigma_w * sol.sigma_w * second_moment(q_prev, activation, rule) + sol.sigma_b * sol.sigma_b;
}

FixedPointResult solve_fixed_point(const MeanFieldSolution& sol, Activation activation, double q_init,
                                   const QuadratureRule& rule) {
  if (!(q_init > 0.0)) throw ShapeError("solve_fixed_point: q_init must be positive");
  // Slope of the map at the origin is sigma_w^2 phi'(0)^2 = sigma_w^2.
  const double w2 = sol.sigma_w * sol.sigma_w;
  if (sol.sigma_b == 0.0 &&
      ((activation == Activation::tanh && w2 <= 1.0) || (activation == Activation::identity && w2 < 1.0)))
    return {0.0, true, 0};

  constexpr int kMaxIter = 10000;
  double q = q_init;
  for (int it = 1; it <= kMaxIter; ++it) {
    const double next = variance_recursion_step(q, sol, activation, rule);
    if (!std::isfinite(next)) throw ConvergenceError("solve_fixed_point: iterate diverged", q);
    if (std::abs(next - q) < 1e-12) return {next, false, it};
    q = next;
  }
  throw ConvergenceError("solve_fixed_point: no convergence after 1e4 iterations", q);
}

double chi(const MeanFieldSolution& sol, Activation activation, const QuadratureRule& rule) {
  if (!(sol.q_star > 0.0)) throw ShapeError("chi: q_star must be positive");
  return sol.sigma_w * sol.sigma_w * derivative_second_moment(sol.q_star, activation, rule);
}

CriticalResiduals critical_residuals(const MeanFieldSolution& sol, Activation activation, const QuadratureRule& rule) {
  return {variance_recursion_step(sol.q_star, sol, activation, rule) - sol.q_star, chi(sol, activation, rule) - 1.0};
}

MeanFieldSolution solve_critical(double q_star_target, Activation activation, const QuadratureRule& rule) {
  if (!(q_star_target > 0.0)) throw ShapeError("solve_critical: q* must be positive");
  if (activation == Activation::identity) return {1.0, 0.0, q_star_target, 1.0, true};

  const double q = q_star_target;
  constexpr double kSigmaWMin = 0.5, kSigmaWMax = 3.0;
  constexpr double kTol = 1e-10;

  auto residual = [&](double sigma_w, double bias_var) -> std::array<double, 2> {
    MeanFieldSolution s{sigma_w, std::sqrt(std::max(bias_var, 0.0)), q, 0.0, false};
    const double fp = sigma_w * sigma_w * second_moment(q, activation, rule) + bias_var - q;
    return {fp, chi(s, activation, rule) - 1.0};
  };
  auto norm = [](const std::array<double, 2>& r) { return std::hypot(r[0], r[1]); };

  // Damped Newton on (sigma_w, sigma_b^2).
  double sw = 1.0, bv = 0.0;
  std::array<double, 2> r = residual(sw, bv);
  bool converged = norm(r) < kTol * 1e-2;
  for (int it = 0; it < 100 && !converged; ++it) {
    constexpr double h = 1e-7;
    const auto rw = residual(sw + h, bv);
    const auto rb = residual(sw, bv + h);
    const double j00 = (rw[0] - r[0]) / h, j01 = (rb[0] - r[0]) / h;
    const double j10 = (rw[1] - r[1]) / h, j11 = (rb[1] - r[1]) / h;
    const double det = j00 * j11 - j01 * j10;
    if (!std::isfinite(det) || std::abs(det) < 1e-300) break;
    const double dsw = -(j11 * r[0] - j01 * r[1]) / det;
    const double dbv = -(-j10 * r[0] + j00 * r[1]) / det;

    double step = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 30; ++ls, step *= 0.5) {
      const double sw_new = std::clamp(sw + step * dsw, kSigmaWMin, kSigmaWMax);
      const double bv_new = std::clamp(bv + step * dbv, 0.0, q);
      const auto r_new = residual(sw_new, bv_new);
      if (norm(r_new) < norm(r)) {
        sw = sw_new;
        bv = bv_new;
        r = r_new;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    converged = std::abs(r[0]) < kTol * 1e-2 && std::abs(r[1]) < kTol * 1e-2;
  }

  if (!converged) {
    // Bisection fallback: chi is increasing in sigma_w; sigma_b^2 then follows
    // from the fixed-point equation.
    double lo = kSigmaWMin, hi = kSigmaWMax;
    auto chi_res = [&](double s) { return residual(s, 0.0)[1]; };
    if (chi_res(lo) > 0.0 || chi_res(hi) < 0.0)
      throw NumericalError("solve_critical: no chi = 1 solution with sigma_w in [0.5, 3]");
    for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
      const double mid = 0.5 * (lo + hi);
      (chi_res(mid) < 0.0 ? lo : hi) = mid;
    }
    sw = 0.5 * (lo + hi);
    bv = q - sw * sw * second_moment(q, activation, rule);
    r = residual(sw, bv);
  }

  if (bv < 0.0 || bv > q || sw < kSigmaWMin || sw > kSigmaWMax)
    throw NumericalError("solve_critical: solution outside search box for q* = " + std::to_string(q));
  if (std::abs(r[0]) >= kTol || std::abs(r[1]) >= kTol)
    throw NumericalError("solve_critical: residuals did not reach 1e-10 for q* = " + std::to_string(q));

  MeanFieldSolution sol{sw, std::sqrt(bv), q, 0.0, true};
  sol.chi = chi(sol, activation, rule);
  return sol;
}

double mean_activation(const MeanFieldSolution& sol, Activation activation, const QuadratureRule& rule) {
  if (activation == Activation::identity) return 0.0;
  return gauss_expect([](double h) { return std::tanh(h); }, sol.q_star, rule);
}

std::string to_string(WeightInit init) { return init == WeightInit::gaussian ? "gaussian" : "orthogonal"; }

WeightInit parse_weight_init(const std::string& name) {
  if (name == "gaussian") return WeightInit::gaussian;
  if (name == "orthogonal") return WeightInit::orthogonal;
  throw ConfigError("unknown init kind '" + name + "'");
}

Matrix orthonormal_factor(const Matrix& m) {
  if (m.rows() < m.cols()) throw ShapeError("orthonormal_factor: need rows >= cols");
  Eigen::HouseholderQR<Matrix> qr(m);
  const Matrix r = qr.matrixQR().topLeftCorner(m.cols(), m.cols()).triangularView<Eigen::Upper>();
  Matrix q = qr.householderQ() * Matrix::Identity(m.rows(), m.cols());
  const double scale = std::max(1.0, r.cwiseAbs().maxCoeff());
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    if (std::abs(r(j, j)) <= 1e-13 * scale) throw NumericalError("orthonormal_factor: matrix is rank deficient");
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  return q;
}

Matrix sample_weights(int n, int p, WeightInit kind, double sigma_w, Rng& rng) {
  if (n <= 0 || p <= 0) throw ShapeError("sample_weights: shape must be positive");
  if (kind == WeightInit::gaussian) return rng.normal_matrix(n, p) * (sigma_w / std::sqrt(static_cast<double>(p)));
  if (n < p) throw ShapeError("sample_weights: orthogonal init needs n >= p");
  return sigma_w * orthonormal_factor(rng.normal_matrix(n, p));
}

double input_norm_squared_target(const MeanFieldSolution& sol, int n1) {
  const double bias_var = sol.sigma_b * sol.sigma_b;
  if (!(sol.q_star > bias_var)) throw ShapeError("rescale_input: need q* > sigma_b^2");
  return static_cast<double>(n1) * (sol.q_star - bias_var) / (sol.sigma_w * sol.sigma_w);
}

Vector rescale_input(const Vector& x0, const MeanFieldSolution& sol, int n1) {
  const double target = input_norm_squared_target(sol, n1);
  const double norm = x0.norm();
  if (norm == 0.0) throw ShapeError("rescale_input: zero input");
  return x0 * (std::sqrt(target) / norm);
}

}  // namespace critspec

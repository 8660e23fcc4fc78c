#include "critspec/manifold.hpp"

#include <cmath>

#include "critspec/errors.hpp"
#include "critspec/meanfield.hpp"

namespace critspec {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* where) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError(std::string(where) + ": shape mismatch");
}

Matrix sym(const Matrix& a) { return 0.5 * (a + a.transpose()); }

}  // namespace

Matrix stiefel_project(const Matrix& w, const Matrix& g) {
  require_same_shape(w, g, "stiefel_project");
  return g - w * sym(w.transpose() * g);
}

Matrix stiefel_retract(const Matrix& w, const Matrix& xi) {
  require_same_shape(w, xi, "stiefel_retract");
  if (w.rows() < w.cols()) throw ShapeError("stiefel_retract: need n >= p");
  return orthonormal_factor(w + xi);
}

Matrix stiefel_transport_to(const Matrix& y, const Matrix& xi) { return stiefel_project(y, xi); }

Matrix stiefel_transport(const Matrix& w, const Matrix& zeta, const Matrix& xi) {
  require_same_shape(w, xi, "stiefel_transport");
  return stiefel_transport_to(stiefel_retract(w, zeta), xi);
}

double stiefel_residual(const Matrix& w) {
  return (w.transpose() * w - Matrix::Identity(w.cols(), w.cols())).norm();
}

Matrix oblique_project(const Matrix& w, const Matrix& g) {
  require_same_shape(w, g, "oblique_project");
  const Eigen::RowVectorXd inner = (w.array() * g.array()).colwise().sum();
  return g - w * inner.asDiagonal();
}

Matrix oblique_exp(const Matrix& w, const Matrix& xi) {
  require_same_shape(w, xi, "oblique_exp");
  Matrix out(w.rows(), w.cols());
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    const double t = xi.col(j).norm();
    if (t < 1e-9)
      out.col(j) = w.col(j) * (1.0 - 0.5 * t * t) + xi.col(j);
    else
      out.col(j) = w.col(j) * std::cos(t) + xi.col(j) * (std::sin(t) / t);
    out.col(j).normalize();
  }
  return out;
}

Matrix oblique_transport(const Matrix& w, const Matrix& zeta, const Matrix& xi) {
  require_same_shape(w, zeta, "oblique_transport");
  require_same_shape(w, xi, "oblique_transport");
  Matrix out = xi;
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    const double t = zeta.col(j).norm();
    if (t == 0.0) continue;
    const Vector u = zeta.col(j) / t;
    const double coeff = u.dot(xi.col(j));
    out.col(j) -= coeff * ((1.0 - std::cos(t)) * u + std::sin(t) * w.col(j));
  }
  return out;
}

double oblique_residual(const Matrix& w) {
  double worst = 0.0;
  for (Eigen::Index j = 0; j < w.cols(); ++j) worst = std::max(worst, std::abs(w.col(j).norm() - 1.0));
  return worst;
}

PenaltyResult ortho_penalty(const Matrix& w, double lambda) {
  if (!(lambda >= 0.0)) throw ShapeError("ortho_penalty: lambda must be nonnegative");
  const Matrix gap = w.transpose() * w - Matrix::Identity(w.cols(), w.cols());
  return {0.5 * lambda * gap.squaredNorm(), 2.0 * lambda * w * gap};
}

std::string to_string(ManifoldKind kind) { return kind == ManifoldKind::stiefel ? "stiefel" : "oblique"; }

Matrix manifold_project(ManifoldKind kind, const Matrix& w, const Matrix& g) {
  return kind == ManifoldKind::stiefel ? stiefel_project(w, g) : oblique_project(w, g);
}

Matrix manifold_step(ManifoldKind kind, const Matrix& w, const Matrix& xi) {
  return kind == ManifoldKind::stiefel ? stiefel_retract(w, xi) : oblique_exp(w, xi);
}

Matrix manifold_transport(ManifoldKind kind, const Matrix& w, const Matrix& zeta, const Matrix& xi,
                          const Matrix& destination) {
  return kind == ManifoldKind::stiefel ? stiefel_transport_to(destination, xi) : oblique_transport(w, zeta, xi);
}

double manifold_residual(ManifoldKind kind, const Matrix& w) {
  return kind == ManifoldKind::stiefel ? stiefel_residual(w) : oblique_residual(w);
}

double ScaledManifoldParam::scale() const { return std::exp(log_scale); }

Matrix ScaledManifoldParam::weight() const { return scale() * point; }

ScaledManifoldParam ScaledManifoldParam::from_weight(ManifoldKind kind, const Matrix& w, double scale) {
  if (!(scale > 0.0)) throw ShapeError("ScaledManifoldParam: scale must be positive");
  ScaledManifoldParam p;
  p.kind = kind;
  p.log_scale = std::log(scale);
  if (kind == ManifoldKind::stiefel) {
    if (w.rows() < w.cols())
      throw ConfigError("stiefel constraint needs fan-out >= fan-in, got " + std::to_string(w.rows()) + "x" +
                        std::to_string(w.cols()));
    p.point = orthonormal_factor(w);
  } else {
    p.point = w;
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      const double n = w.col(j).norm();
      if (n == 0.0) throw NumericalError("ScaledManifoldParam: zero column cannot be normalized");
      p.point.col(j) /= n;
    }
  }
  return p;
}

RiemannianAdamState RiemannianAdamState::zeros_like(const ScaledManifoldParam& param) {
  RiemannianAdamState s;
  s.first_moment = Matrix::Zero(param.point.rows(), param.point.cols());
  return s;
}

ScaledGradient scaled_gradient(const ScaledManifoldParam& param, const Matrix& weight_grad) {
  require_same_shape(param.point, weight_grad, "scaled_gradient");
  const double s = param.scale();
  return {s * weight_grad, s * (weight_grad.array() * param.point.array()).sum()};
}

void riemannian_adam_step(ScaledManifoldParam& param, RiemannianAdamState& state, const Matrix& point_grad,
                          double log_scale_grad, const AdamHyper& manifold_hyper, const AdamHyper& scale_hyper) {
  require_same_shape(param.point, point_grad, "riemannian_adam_step");
  require_same_shape(param.point, state.first_moment, "riemannian_adam_step");
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);

  const Matrix xi = manifold_project(param.kind, param.point, point_grad);
  state.first_moment = manifold_hyper.beta1 * state.first_moment + (1.0 - manifold_hyper.beta1) * xi;
  state.second_moment = manifold_hyper.beta2 * state.second_moment + (1.0 - manifold_hyper.beta2) * xi.squaredNorm();
  const double m_corr = 1.0 - std::pow(manifold_hyper.beta1, t);
  const double v_corr = 1.0 - std::pow(manifold_hyper.beta2, t);
  const double denom = std::sqrt(state.second_moment / v_corr) + manifold_hyper.eps;
  const Matrix eta = (-manifold_hyper.lr / (m_corr * denom)) * state.first_moment;
  if (eta.squaredNorm() > 0.0) {
    const Matrix next = manifold_step(param.kind, param.point, eta);
    state.first_moment = manifold_transport(param.kind, param.point, eta, state.first_moment, next);
    param.point = next;
  }

  state.scale_first = scale_hyper.beta1 * state.scale_first + (1.0 - scale_hyper.beta1) * log_scale_grad;
  state.scale_second =
      scale_hyper.beta2 * state.scale_second + (1.0 - scale_hyper.beta2) * log_scale_grad * log_scale_grad;
  const double sm = state.scale_first / (1.0 - std::pow(scale_hyper.beta1, t));
  const double sv = state.scale_second / (1.0 - std::pow(scale_hyper.beta2, t));
  param.log_scale -= scale_hyper.lr * sm / (std::sqrt(sv) + scale_hyper.eps);
}

}  // namespace critspec

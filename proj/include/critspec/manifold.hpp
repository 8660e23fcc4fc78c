#pragma once

#include <string>

#include "critspec/numerics/spectral.hpp"

namespace critspec {

// Stiefel St(p, n): n x p, W^T W = I_p, n >= p.

/// G - W sym(W^T G).
Matrix stiefel_project(const Matrix& w, const Matrix& g);
/// Q factor of W + xi with diag(R) > 0.
Matrix stiefel_retract(const Matrix& w, const Matrix& xi);
/// Projects xi onto the tangent space at Y = stiefel_retract(W, zeta).
Matrix stiefel_transport(const Matrix& w, const Matrix& zeta, const Matrix& xi);
/// Same transport with the destination point already known.
Matrix stiefel_transport_to(const Matrix& y, const Matrix& xi);
double stiefel_residual(const Matrix& w);

// Oblique Ob(p, n): n x p, unit-norm columns. Every column lives on a sphere.

Matrix oblique_project(const Matrix& w, const Matrix& g);
/// Columnwise sphere exponential map; columns are renormalized afterwards.
Matrix oblique_exp(const Matrix& w, const Matrix& xi);
/// Columnwise parallel transport of xi along the geodesic with velocity zeta.
Matrix oblique_transport(const Matrix& w, const Matrix& zeta, const Matrix& xi);
double oblique_residual(const Matrix& w);

struct PenaltyResult {
  double value = 0.0;
  Matrix gradient;
};

/// (lambda/2) ||W^T W - I||_F^2 and its gradient 2 lambda W (W^T W - I).
PenaltyResult ortho_penalty(const Matrix& w, double lambda);

enum class ManifoldKind { stiefel, oblique };
std::string to_string(ManifoldKind kind);

Matrix manifold_project(ManifoldKind kind, const Matrix& w, const Matrix& g);
/// Retraction on Stiefel, exponential map on Oblique.
Matrix manifold_step(ManifoldKind kind, const Matrix& w, const Matrix& xi);
Matrix manifold_transport(ManifoldKind kind, const Matrix& w, const Matrix& zeta, const Matrix& xi,
                          const Matrix& destination);
double manifold_residual(ManifoldKind kind, const Matrix& w);

/// Effective weight s * P with s = exp(log_scale).
struct ScaledManifoldParam {
  ManifoldKind kind = ManifoldKind::stiefel;
  Matrix point;
  double log_scale = 0.0;

  double scale() const;
  Matrix weight() const;
  /// Point on the manifold nearest in the QR / column-normalization sense.
  static ScaledManifoldParam from_weight(ManifoldKind kind, const Matrix& w, double scale);
};

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct RiemannianAdamState {
  Matrix first_moment;        ///< tangent at the current point
  double second_moment = 0.0;  ///< scalar per tensor
  double scale_first = 0.0;
  double scale_second = 0.0;
  long step_count = 0;

  static RiemannianAdamState zeros_like(const ScaledManifoldParam& param);
};

/// Gradients of the loss with respect to the manifold point and log_scale,
/// from the gradient with respect to the effective weight.
struct ScaledGradient {
  Matrix point;
  double log_scale = 0.0;
};
ScaledGradient scaled_gradient(const ScaledManifoldParam& param, const Matrix& weight_grad);

/// One Riemannian ADAM step on the point and a Euclidean ADAM step on
/// log_scale. point_grad is the ambient gradient with respect to P.
void riemannian_adam_step(ScaledManifoldParam& param, RiemannianAdamState& state, const Matrix& point_grad,
                          double log_scale_grad, const AdamHyper& manifold_hyper, const AdamHyper& scale_hyper);

}  // namespace critspec

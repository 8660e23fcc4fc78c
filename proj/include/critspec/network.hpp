#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "critspec/numerics/spectral.hpp"

namespace critspec {

enum class Activation { tanh, identity };
enum class HeadKind { gaussian_identity, softmax };

std::string to_string(Activation a);
std::string to_string(HeadKind h);
Activation parse_activation(const std::string& name);
HeadKind parse_head(const std::string& name);

double activate(Activation a, double h);
double activate_derivative(Activation a, double h);

/// Fully connected network h^l = W^l x^{l-1} + b^l, x^l = phi(h^l) for
/// l = 1..L, followed by the linear readout h^g = W^g x^L + b^g.
///
/// widths holds N^0..N^L and then N^g. weights/biases hold layers 1..L and
/// then the readout, so weights[l-1] is W^l and weights.back() is W^g.
struct NetworkState {
  std::vector<int> widths;
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  Activation activation = Activation::tanh;
  HeadKind head = HeadKind::softmax;

  /// Zero-initialized network with consistent shapes.
  static NetworkState zeros(std::vector<int> widths, Activation activation, HeadKind head);

  int depth() const { return static_cast<int>(widths.size()) - 2; }
  int input_dim() const { return widths.front(); }
  int output_dim() const { return widths.back(); }

  /// W^l for l in 1..L+1 (L+1 is the readout).
  const Matrix& weight(int layer) const { return weights.at(layer - 1); }
  const Vector& bias(int layer) const { return biases.at(layer - 1); }

  /// Parameters of the hidden layers only (W^1, b^1, ..., W^L, b^L).
  Eigen::Index hidden_parameter_count() const;
  Eigen::Index parameter_count() const;

  /// Throws ShapeError on inconsistent shapes, NumericalError on
  /// non-finite entries.
  void validate() const;
};

/// Per-layer values of one forward pass. Columns index samples.
struct ForwardTrace {
  std::vector<Matrix> preactivations;  ///< h^1..h^L, then h^g
  std::vector<Matrix> activations;     ///< x^0..x^L
  std::vector<Matrix> derivatives;     ///< phi'(h^1)..phi'(h^L), the diagonals of D^l

  Eigen::Index batch_size() const { return activations.front().cols(); }
  const Matrix& output() const { return preactivations.back(); }
};

ForwardTrace forward(const NetworkState& net, const Matrix& inputs);
ForwardTrace forward(const NetworkState& net, const Vector& x0);

/// d x^to / d x^from = prod_{l=from+1}^{to} D^l W^l at one sample,
/// 0 <= from < to <= L.
Matrix io_jacobian(const ForwardTrace& trace, const NetworkState& net, int from_layer, int to_layer,
                   Eigen::Index sample = 0);

/// d h^g / d h^alpha for alpha in 1..L.
Matrix output_jacobian(const ForwardTrace& trace, const NetworkState& net, int alpha, Eigen::Index sample = 0);

/// d h^g / d x^0.
Matrix output_input_jacobian(const ForwardTrace& trace, const NetworkState& net, Eigen::Index sample = 0);

enum class ParamKind { weights, bias };

struct BlockLabel {
  int layer = 1;
  ParamKind kind = ParamKind::weights;
  bool operator==(const BlockLabel&) const = default;
};

std::string to_string(const BlockLabel& label);

/// Flat ordering of hidden-layer parameters: vec(W^1), b^1, vec(W^2), ...
/// vec() is column-major, so d h^l / d vec(W^l) = x^{l-1}^T (kron) I.
class HiddenParameterLayout {
 public:
  explicit HiddenParameterLayout(const NetworkState& net);

  Eigen::Index size() const { return total_; }
  Eigen::Index offset(const BlockLabel& label) const;
  Eigen::Index length(const BlockLabel& label) const;
  const std::vector<BlockLabel>& blocks() const { return blocks_; }

  /// Block boundaries p_0 = 0 < p_1 < ... < p_n = size().
  std::vector<Eigen::Index> boundaries() const;

 private:
  std::vector<BlockLabel> blocks_;
  std::vector<Eigen::Index> offsets_;
  std::vector<Eigen::Index> lengths_;
  Eigen::Index total_ = 0;
};

/// Flattens the hidden parameters of net into the layout order.
Vector flatten_hidden(const NetworkState& net);

/// J_theta v at every sample: returns N^g x B.
Matrix hidden_jvp(const NetworkState& net, const ForwardTrace& trace, const Vector& tangent);

/// sum_i J_theta,i^T u_i for cotangents u (N^g x B).
Vector hidden_vjp(const NetworkState& net, const ForwardTrace& trace, const Matrix& cotangent);

/// Dense parameter blocks are only built up to this many parameters.
inline constexpr Eigen::Index kDenseParameterCap = 65536;

/// J^{h^g}_a for one parameter block a at one sample, applied matrix-free.
class ParamJacobianBlock {
 public:
  ParamJacobianBlock(const NetworkState& net, const ForwardTrace& trace, BlockLabel label, Eigen::Index sample = 0);

  Eigen::Index rows() const { return out_jac_.rows(); }
  Eigen::Index cols() const;

  Vector apply(const Vector& v) const;
  Vector apply_transpose(const Vector& u) const;

  /// Throws ShapeError above kDenseParameterCap parameters.
  Matrix dense() const;

 private:
  BlockLabel label_;
  Matrix out_jac_;  // d h^g / d h^alpha
  Vector x_prev_;   // x^{alpha-1}
};

/// Dense J_theta (N^g x hidden params) at one sample.
Matrix hidden_parameter_jacobian(const NetworkState& net, const ForwardTrace& trace, Eigen::Index sample = 0);

/// Canonical GLM output layer.
struct GlmHead {
  HeadKind kind = HeadKind::softmax;

  /// Hessian of the negative log-likelihood w.r.t. h^g: I for the Gaussian
  /// head, diag(p) - p p^T for softmax.
  Matrix hessian(const Vector& hg) const;
  /// Symmetric PSD square root of hessian(hg).
  Matrix hessian_sqrt(const Vector& hg) const;
};

Matrix head_hessian(HeadKind kind, const Vector& hg);

Vector softmax(const Vector& logits);

/// Labels for the softmax head, target values (N^g x B) for the Gaussian head.
struct Targets {
  std::vector<int> labels;
  Matrix values;
};

/// Gradient with the same layout as NetworkState (hidden layers, then readout).
struct Gradients {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;

  static Gradients zeros_like(const NetworkState& net);
};

struct LossAndGrad {
  double loss = 0.0;
  Gradients grad;
};

/// Mean loss over the batch: 0.5 ||h^g - y||^2 (Gaussian) or cross-entropy
/// (softmax).
double loss(const NetworkState& net, const Matrix& inputs, const Targets& targets);

/// Mean loss and its gradient by backpropagation.
LossAndGrad loss_and_grad(const NetworkState& net, const Matrix& inputs, const Targets& targets);

/// Mean loss computed from an existing trace.
double loss_from_trace(HeadKind head, const ForwardTrace& trace, const Targets& targets);

}  // namespace critspec

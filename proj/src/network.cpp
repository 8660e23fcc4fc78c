#include "critspec/network.hpp"

#include <cmath>

#include <Eigen/Eigenvalues>

#include "critspec/errors.hpp"

namespace critspec {

std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "identity"; }

std::string to_string(HeadKind h) { return h == HeadKind::softmax ? "softmax" : "gaussian_identity"; }

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "identity" || name == "linear") return Activation::identity;
  throw ConfigError("unknown activation '" + name + "'");
}

HeadKind parse_head(const std::string& name) {
  if (name == "softmax") return HeadKind::softmax;
  if (name == "gaussian_identity" || name == "gaussian") return HeadKind::gaussian_identity;
  throw ConfigError("unknown head '" + name + "'");
}

double activate(Activation a, double h) { return a == Activation::tanh ? std::tanh(h) : h; }

double activate_derivative(Activation a, double h) {
  if (a == Activation::identity) return 1.0;
  const double t = std::tanh(h);
  return 1.0 - t * t;
}

std::string to_string(const BlockLabel& label) {
  return (label.kind == ParamKind::weights ? "W" : "b") + std::to_string(label.layer);
}

// --- NetworkState -----------------------------------------------------------

NetworkState NetworkState::zeros(std::vector<int> widths, Activation activation, HeadKind head) {
  if (widths.size() < 3) throw ShapeError("NetworkState: need input, at least one hidden layer, and output widths");
  for (int w : widths)
    if (w <= 0) throw ShapeError("NetworkState: widths must be positive");
  NetworkState net;
  net.widths = std::move(widths);
  net.activation = activation;
  net.head = head;
  for (std::size_t l = 1; l < net.widths.size(); ++l) {
    net.weights.push_back(Matrix::Zero(net.widths[l], net.widths[l - 1]));
    net.biases.push_back(Vector::Zero(net.widths[l]));
  }
  return net;
}

Eigen::Index NetworkState::hidden_parameter_count() const {
  Eigen::Index n = 0;
  for (int l = 1; l <= depth(); ++l) n += weight(l).size() + bias(l).size();
  return n;
}

Eigen::Index NetworkState::parameter_count() const {
  return hidden_parameter_count() + weights.back().size() + biases.back().size();
}

void NetworkState::validate() const {
  if (widths.size() < 3) throw ShapeError("NetworkState: too few widths");
  if (weights.size() != widths.size() - 1 || biases.size() != widths.size() - 1)
    throw ShapeError("NetworkState: layer count does not match widths");
  for (std::size_t l = 1; l < widths.size(); ++l) {
    const Matrix& w = weights[l - 1];
    if (w.rows() != widths[l] || w.cols() != widths[l - 1] || biases[l - 1].size() != widths[l])
      throw ShapeError("NetworkState: shape mismatch at layer " + std::to_string(l));
    if (!w.allFinite() || !biases[l - 1].allFinite())
      throw NumericalError("NetworkState: non-finite parameters at layer " + std::to_string(l));
  }
}

// --- forward / Jacobians ----------------------------------------------------

ForwardTrace forward(const NetworkState& net, const Matrix& inputs) {
  if (inputs.rows() != net.input_dim())
    throw ShapeError("forward: input dimension " + std::to_string(inputs.rows()) + " != N^0 = " +
                     std::to_string(net.input_dim()));
  const int depth = net.depth();
  ForwardTrace trace;
  trace.activations.reserve(depth + 1);
  trace.preactivations.reserve(depth + 1);
  trace.derivatives.reserve(depth);
  trace.activations.push_back(inputs);
  const Activation act = net.activation;
  for (int l = 1; l <= depth; ++l) {
    Matrix h = net.weight(l) * trace.activations.back();
    h.colwise() += net.bias(l);
    trace.activations.push_back(h.unaryExpr([act](double v) { return activate(act, v); }));
    trace.derivatives.push_back(h.unaryExpr([act](double v) { return activate_derivative(act, v); }));
    trace.preactivations.push_back(std::move(h));
  }
  Matrix hg = net.weights.back() * trace.activations.back();
  hg.colwise() += net.biases.back();
  trace.preactivations.push_back(std::move(hg));
  return trace;
}

ForwardTrace forward(const NetworkState& net, const Vector& x0) { return forward(net, Matrix(x0)); }

namespace {

void check_sample(const ForwardTrace& trace, Eigen::Index sample) {
  if (sample < 0 || sample >= trace.batch_size()) throw ShapeError("sample index out of range");
}

}  // namespace

Matrix io_jacobian(const ForwardTrace& trace, const NetworkState& net, int from_layer, int to_layer,
                   Eigen::Index sample) {
  if (from_layer < 0 || to_layer > net.depth() || from_layer >= to_layer)
    throw ShapeError("io_jacobian: need 0 <= from < to <= L");
  check_sample(trace, sample);
  Matrix j = Matrix::Identity(net.widths[from_layer], net.widths[from_layer]);
  for (int l = from_layer + 1; l <= to_layer; ++l)
    j = trace.derivatives[l - 1].col(sample).asDiagonal() * (net.weight(l) * j);
  return j;
}

Matrix output_jacobian(const ForwardTrace& trace, const NetworkState& net, int alpha, Eigen::Index sample) {
  if (alpha < 1 || alpha > net.depth()) throw ShapeError("output_jacobian: alpha must be in 1..L");
  check_sample(trace, sample);
  // Backward accumulation keeps the running product at N^g rows.
  Matrix j = net.weights.back();
  for (int l = net.depth(); l >= alpha; --l) {
    j = j * trace.derivatives[l - 1].col(sample).asDiagonal();
    if (l > alpha) j = j * net.weight(l);
  }
  return j;
}

Matrix output_input_jacobian(const ForwardTrace& trace, const NetworkState& net, Eigen::Index sample) {
  return output_jacobian(trace, net, 1, sample) * net.weight(1);
}

// --- parameter layout and matrix-free products --------------------------------

HiddenParameterLayout::HiddenParameterLayout(const NetworkState& net) {
  for (int l = 1; l <= net.depth(); ++l) {
    for (ParamKind kind : {ParamKind::weights, ParamKind::bias}) {
      const Eigen::Index len = kind == ParamKind::weights ? net.weight(l).size() : net.bias(l).size();
      blocks_.push_back({l, kind});
      offsets_.push_back(total_);
      lengths_.push_back(len);
      total_ += len;
    }
  }
}

Eigen::Index HiddenParameterLayout::offset(const BlockLabel& label) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    if (blocks_[i] == label) return offsets_[i];
  throw ShapeError("HiddenParameterLayout: unknown block " + to_string(label));
}

Eigen::Index HiddenParameterLayout::length(const BlockLabel& label) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    if (blocks_[i] == label) return lengths_[i];
  throw ShapeError("HiddenParameterLayout: unknown block " + to_string(label));
}

std::vector<Eigen::Index> HiddenParameterLayout::boundaries() const {
  std::vector<Eigen::Index> b{0};
  for (std::size_t i = 0; i < blocks_.size(); ++i) b.push_back(offsets_[i] + lengths_[i]);
  return b;
}

Vector flatten_hidden(const NetworkState& net) {
  Vector theta(net.hidden_parameter_count());
  Eigen::Index pos = 0;
  for (int l = 1; l <= net.depth(); ++l) {
    const Matrix& w = net.weight(l);
    theta.segment(pos, w.size()) = Eigen::Map<const Vector>(w.data(), w.size());
    pos += w.size();
    theta.segment(pos, net.bias(l).size()) = net.bias(l);
    pos += net.bias(l).size();
  }
  return theta;
}

Matrix hidden_jvp(const NetworkState& net, const ForwardTrace& trace, const Vector& tangent) {
  if (tangent.size() != net.hidden_parameter_count()) throw ShapeError("hidden_jvp: tangent has wrong length");
  const Eigen::Index batch = trace.batch_size();
  Matrix dx = Matrix::Zero(net.input_dim(), batch);
  Eigen::Index pos = 0;
  for (int l = 1; l <= net.depth(); ++l) {
    const Matrix& w = net.weight(l);
    Eigen::Map<const Matrix> dw(tangent.data() + pos, w.rows(), w.cols());
    pos += w.size();
    Eigen::Map<const Vector> db(tangent.data() + pos, w.rows());
    pos += w.rows();
    Matrix dh = (l == 1 ? Matrix(dw * trace.activations[0]) : Matrix(w * dx + dw * trace.activations[l - 1]));
    dh.colwise() += db;
    dx = trace.derivatives[l - 1].cwiseProduct(dh);
  }
  return net.weights.back() * dx;
}

Vector hidden_vjp(const NetworkState& net, const ForwardTrace& trace, const Matrix& cotangent) {
  if (cotangent.rows() != net.output_dim() || cotangent.cols() != trace.batch_size())
    throw ShapeError("hidden_vjp: cotangent shape mismatch");
  Vector out(net.hidden_parameter_count());
  Eigen::Index pos = out.size();
  Matrix gx = net.weights.back().transpose() * cotangent;
  for (int l = net.depth(); l >= 1; --l) {
    const Matrix& w = net.weight(l);
    const Matrix gh = trace.derivatives[l - 1].cwiseProduct(gx);
    pos -= w.rows();
    out.segment(pos, w.rows()) = gh.rowwise().sum();
    pos -= w.size();
    Eigen::Map<Matrix>(out.data() + pos, w.rows(), w.cols()).noalias() = gh * trace.activations[l - 1].transpose();
    if (l > 1) gx = w.transpose() * gh;
  }
  return out;
}

ParamJacobianBlock::ParamJacobianBlock(const NetworkState& net, const ForwardTrace& trace, BlockLabel label,
                                       Eigen::Index sample)
    : label_(label),
      out_jac_(output_jacobian(trace, net, label.layer, sample)),
      x_prev_(trace.activations.at(label.layer - 1).col(sample)) {}

Eigen::Index ParamJacobianBlock::cols() const {
  return label_.kind == ParamKind::bias ? out_jac_.cols() : out_jac_.cols() * x_prev_.size();
}

Vector ParamJacobianBlock::apply(const Vector& v) const {
  if (v.size() != cols()) throw ShapeError("ParamJacobianBlock::apply: wrong length");
  if (label_.kind == ParamKind::bias) return out_jac_ * v;
  Eigen::Map<const Matrix> dw(v.data(), out_jac_.cols(), x_prev_.size());
  return out_jac_ * (dw * x_prev_);
}

Vector ParamJacobianBlock::apply_transpose(const Vector& u) const {
  if (u.size() != rows()) throw ShapeError("ParamJacobianBlock::apply_transpose: wrong length");
  const Vector gh = out_jac_.transpose() * u;
  if (label_.kind == ParamKind::bias) return gh;
  const Matrix outer = gh * x_prev_.transpose();
  return Eigen::Map<const Vector>(outer.data(), outer.size());
}

Matrix ParamJacobianBlock::dense() const {
  if (cols() > kDenseParameterCap) throw ShapeError("ParamJacobianBlock::dense: block exceeds dense parameter cap");
  if (label_.kind == ParamKind::bias) return out_jac_;
  // (1 kron J)(x^T kron I) = x^T kron J
  const Eigen::Index n = out_jac_.cols();
  Matrix d(rows(), cols());
  for (Eigen::Index j = 0; j < x_prev_.size(); ++j) d.middleCols(j * n, n) = x_prev_(j) * out_jac_;
  return d;
}

Matrix hidden_parameter_jacobian(const NetworkState& net, const ForwardTrace& trace, Eigen::Index sample) {
  const HiddenParameterLayout layout(net);
  if (layout.size() > kDenseParameterCap) throw ShapeError("hidden_parameter_jacobian: exceeds dense parameter cap");
  Matrix j(net.output_dim(), layout.size());
  for (const BlockLabel& label : layout.blocks())
    j.middleCols(layout.offset(label), layout.length(label)) = ParamJacobianBlock(net, trace, label, sample).dense();
  return j;
}

// --- heads and losses ---------------------------------------------------------

Vector softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  Vector p = (logits.array() - m).exp();
  return p / p.sum();
}

Matrix head_hessian(HeadKind kind, const Vector& hg) {
  if (kind == HeadKind::gaussian_identity) return Matrix::Identity(hg.size(), hg.size());
  const Vector p = softmax(hg);
  Matrix h = -p * p.transpose();
  h.diagonal() += p;
  return h;
}

Matrix GlmHead::hessian(const Vector& hg) const { return head_hessian(kind, hg); }

Matrix GlmHead::hessian_sqrt(const Vector& hg) const {
  if (kind == HeadKind::gaussian_identity) return Matrix::Identity(hg.size(), hg.size());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(head_hessian(kind, hg));
  if (eig.info() != Eigen::Success) throw NumericalError("GlmHead::hessian_sqrt: eigen solve failed");
  const Vector root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

Gradients Gradients::zeros_like(const NetworkState& net) {
  Gradients g;
  for (const Matrix& w : net.weights) g.weights.push_back(Matrix::Zero(w.rows(), w.cols()));
  for (const Vector& b : net.biases) g.biases.push_back(Vector::Zero(b.size()));
  return g;
}

namespace {

void check_targets(HeadKind head, const Matrix& hg, const Targets& targets) {
  const Eigen::Index batch = hg.cols();
  if (batch == 0) throw ShapeError("loss: empty batch");
  if (head == HeadKind::softmax) {
    if (static_cast<Eigen::Index>(targets.labels.size()) != batch) throw ShapeError("loss: label count mismatch");
    for (int y : targets.labels)
      if (y < 0 || y >= hg.rows())
        throw ShapeError("loss: label " + std::to_string(y) + " out of range for " + std::to_string(hg.rows()) +
                         " classes");
  } else if (targets.values.rows() != hg.rows() || targets.values.cols() != batch) {
    throw ShapeError("loss: target values shape mismatch");
  }
}

// Returns mean loss and writes d(mean loss)/d h^g into grad_hg.
double head_loss(HeadKind head, const Matrix& hg, const Targets& targets, Matrix* grad_hg) {
  check_targets(head, hg, targets);
  const auto batch = static_cast<double>(hg.cols());
  double total = 0.0;
  if (grad_hg) grad_hg->resize(hg.rows(), hg.cols());
  if (head == HeadKind::gaussian_identity) {
    const Matrix diff = hg - targets.values;
    total = 0.5 * diff.squaredNorm();
    if (grad_hg) *grad_hg = diff / batch;
  } else {
    for (Eigen::Index i = 0; i < hg.cols(); ++i) {
      const Vector logits = hg.col(i);
      const double m = logits.maxCoeff();
      const double lse = m + std::log((logits.array() - m).exp().sum());
      const int y = targets.labels[i];
      total += lse - logits(y);
      if (grad_hg) {
        grad_hg->col(i) = (logits.array() - lse).exp().matrix();
        (*grad_hg)(y, i) -= 1.0;
      }
    }
    if (grad_hg) *grad_hg /= batch;
  }
  return total / batch;
}

}  // namespace

double loss_from_trace(HeadKind head, const ForwardTrace& trace, const Targets& targets) {
  return head_loss(head, trace.output(), targets, nullptr);
}

double loss(const NetworkState& net, const Matrix& inputs, const Targets& targets) {
  return loss_from_trace(net.head, forward(net, inputs), targets);
}

LossAndGrad loss_and_grad(const NetworkState& net, const Matrix& inputs, const Targets& targets) {
  const ForwardTrace trace = forward(net, inputs);
  Matrix g;
  LossAndGrad out;
  out.loss = head_loss(net.head, trace.output(), targets, &g);
  out.grad = Gradients::zeros_like(net);
  const int depth = net.depth();
  out.grad.weights[depth].noalias() = g * trace.activations[depth].transpose();
  out.grad.biases[depth] = g.rowwise().sum();
  Matrix gx = net.weights.back().transpose() * g;
  for (int l = depth; l >= 1; --l) {
    const Matrix gh = trace.derivatives[l - 1].cwiseProduct(gx);
    out.grad.weights[l - 1].noalias() = gh * trace.activations[l - 1].transpose();
    out.grad.biases[l - 1] = gh.rowwise().sum();
    if (l > 1) gx = net.weight(l).transpose() * gh;
  }
  return out;
}

}  // namespace critspec

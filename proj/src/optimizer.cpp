#include "critspec/optimizer.hpp"

#include <cmath>

#include "critspec/errors.hpp"

namespace critspec {

std::string to_string(TrainingMode mode) {
  switch (mode) {
    case TrainingMode::euclidean:
      return "euclidean";
    case TrainingMode::stiefel:
      return "stiefel";
    case TrainingMode::oblique:
      return "oblique";
  }
  return "euclidean";
}

TrainingMode parse_training_mode(const std::string& name) {
  if (name == "euclidean") return TrainingMode::euclidean;
  if (name == "stiefel") return TrainingMode::stiefel;
  if (name == "oblique") return TrainingMode::oblique;
  throw ConfigError("unknown training mode '" + name + "'");
}

namespace {

template <class T>
void adam_impl(T& param, EuclideanAdamState& state, const T& grad, const AdamHyper& hyper) {
  if (state.first.size() == 0) {
    state.first = Matrix::Zero(grad.rows(), grad.cols());
    state.second = Matrix::Zero(grad.rows(), grad.cols());
  }
  if (state.first.rows() != grad.rows() || state.first.cols() != grad.cols() || param.size() != grad.size())
    throw ShapeError("adam_update: shape mismatch");
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  state.first = hyper.beta1 * state.first + (1.0 - hyper.beta1) * grad;
  state.second = hyper.beta2 * state.second + (1.0 - hyper.beta2) * grad.cwiseProduct(grad);
  const double m_corr = 1.0 - std::pow(hyper.beta1, t);
  const double v_corr = 1.0 - std::pow(hyper.beta2, t);
  param.array() -= hyper.lr * (state.first.array() / m_corr) /
                   ((state.second.array() / v_corr).sqrt() + hyper.eps);
}

}  // namespace

void adam_update(Matrix& param, EuclideanAdamState& state, const Matrix& grad, const AdamHyper& hyper) {
  adam_impl(param, state, grad, hyper);
}

void adam_update(Vector& param, EuclideanAdamState& state, const Vector& grad, const AdamHyper& hyper) {
  adam_impl(param, state, grad, hyper);
}

ParameterGroups make_parameter_groups(const NetworkState& net, TrainingMode mode, double sigma_w) {
  net.validate();
  ParameterGroups g;
  g.mode = mode;
  const int depth = net.depth();
  for (int l = 1; l <= depth + 1; ++l) g.bias_layers.push_back(l);
  if (mode == TrainingMode::euclidean) {
    for (int l = 1; l <= depth + 1; ++l) g.euclidean_weight_layers.push_back(l);
    return g;
  }
  if (!(sigma_w > 0.0)) throw ConfigError("make_parameter_groups: sigma_w must be positive");
  const ManifoldKind kind = mode == TrainingMode::stiefel ? ManifoldKind::stiefel : ManifoldKind::oblique;
  for (int l = 1; l <= depth; ++l)
    g.manifold.push_back(ScaledManifoldParam::from_weight(kind, net.weight(l) / sigma_w, sigma_w));
  g.euclidean_weight_layers.push_back(depth + 1);
  return g;
}

Trainer::Trainer(const NetworkState& net, const OptimizerConfig& config, double sigma_w)
    : net_(net), config_(config), groups_(make_parameter_groups(net, config.mode, sigma_w)) {
  if (!(config.penalty >= 0.0)) throw ConfigError("penalty must be nonnegative");
  weight_state_.resize(net_.weights.size());
  bias_state_.resize(net_.biases.size());
  for (const auto& p : groups_.manifold) manifold_state_.push_back(RiemannianAdamState::zeros_like(p));
  sync_weights();
}

void Trainer::sync_weights() {
  for (std::size_t l = 0; l < groups_.manifold.size(); ++l) net_.weights[l] = groups_.manifold[l].weight();
}

double Trainer::step(const Matrix& inputs, const Targets& targets) {
  const LossAndGrad lg = loss_and_grad(net_, inputs, targets);
  if (!std::isfinite(lg.loss)) return lg.loss;
  const int depth = net_.depth();

  for (int l : groups_.bias_layers) adam_update(net_.biases[l - 1], bias_state_[l - 1], lg.grad.biases[l - 1], config_.euclidean);
  for (int l : groups_.euclidean_weight_layers) {
    Matrix g = lg.grad.weights[l - 1];
    if (l <= depth && config_.penalty > 0.0) g += ortho_penalty(net_.weights[l - 1], config_.penalty).gradient;
    adam_update(net_.weights[l - 1], weight_state_[l - 1], g, config_.euclidean);
  }
  for (std::size_t i = 0; i < groups_.manifold.size(); ++i) {
    ScaledManifoldParam& p = groups_.manifold[i];
    ScaledGradient sg = scaled_gradient(p, lg.grad.weights[i]);
    if (config_.penalty > 0.0) sg.point += ortho_penalty(p.point, config_.penalty).gradient;
    riemannian_adam_step(p, manifold_state_[i], sg.point, sg.log_scale, config_.manifold, config_.scale);
  }
  sync_weights();
  return lg.loss;
}

double Trainer::penalty_value() const {
  double total = 0.0;
  if (groups_.mode == TrainingMode::euclidean) {
    for (int l = 1; l <= net_.depth(); ++l) total += ortho_penalty(net_.weight(l), config_.penalty).value;
  } else {
    for (const auto& p : groups_.manifold) total += ortho_penalty(p.point, config_.penalty).value;
  }
  return total;
}

std::vector<double> Trainer::scales() const {
  std::vector<double> out;
  if (groups_.mode == TrainingMode::euclidean) {
    for (int l = 1; l <= net_.depth(); ++l)
      out.push_back(net_.weight(l).norm() / std::sqrt(static_cast<double>(net_.weight(l).cols())));
  } else {
    for (const auto& p : groups_.manifold) out.push_back(p.scale());
  }
  return out;
}

}  // namespace critspec

#pragma once

#include <string>
#include <vector>

#include "critspec/manifold.hpp"
#include "critspec/network.hpp"

namespace critspec {

enum class TrainingMode { euclidean, stiefel, oblique };
std::string to_string(TrainingMode mode);
TrainingMode parse_training_mode(const std::string& name);

/// Elementwise ADAM moments for one Euclidean tensor.
struct EuclideanAdamState {
  Matrix first;
  Matrix second;
  long step_count = 0;
};

void adam_update(Matrix& param, EuclideanAdamState& state, const Matrix& grad, const AdamHyper& hyper);
void adam_update(Vector& param, EuclideanAdamState& state, const Vector& grad, const AdamHyper& hyper);

/// Group 1 holds Euclidean tensors, group 2 the log-scales, group 3 the
/// manifold points. Manifold modes put every hidden weight in groups 2 and 3
/// and keep biases and the readout in group 1.
struct ParameterGroups {
  TrainingMode mode = TrainingMode::euclidean;
  std::vector<int> euclidean_weight_layers;  ///< 1-based, L + 1 is the readout
  std::vector<int> bias_layers;              ///< 1-based, always every layer
  std::vector<ScaledManifoldParam> manifold;  ///< entry l - 1 for hidden layer l
};

/// Manifold points are the current weights divided by sigma_w, mapped onto
/// the manifold; log_scale starts at ln sigma_w.
ParameterGroups make_parameter_groups(const NetworkState& net, TrainingMode mode, double sigma_w);

struct OptimizerConfig {
  TrainingMode mode = TrainingMode::euclidean;
  double penalty = 0.0;
  AdamHyper euclidean{1e-3, 0.9, 0.999, 1e-8};
  AdamHyper scale{1e-3, 0.9, 0.999, 1e-8};
  AdamHyper manifold{1e-2, 0.9, 0.999, 1e-8};
};

/// Minibatch trainer over the three parameter groups. The orthogonality
/// penalty acts on manifold points in manifold modes and on the raw hidden
/// weights in Euclidean mode.
class Trainer {
 public:
  Trainer(const NetworkState& net, const OptimizerConfig& config, double sigma_w);

  /// Updates all groups from one minibatch and returns its loss before the
  /// update.
  double step(const Matrix& inputs, const Targets& targets);

  const NetworkState& network() const { return net_; }
  const ParameterGroups& groups() const { return groups_; }
  /// Sum of the penalty over hidden layers at the current parameters.
  double penalty_value() const;
  /// Per hidden layer: s in manifold modes, ||W||_F / sqrt(fan-in) otherwise.
  std::vector<double> scales() const;

 private:
  void sync_weights();

  NetworkState net_;
  OptimizerConfig config_;
  ParameterGroups groups_;
  std::vector<EuclideanAdamState> weight_state_;  ///< indexed by layer - 1
  std::vector<EuclideanAdamState> bias_state_;
  std::vector<RiemannianAdamState> manifold_state_;
};

}  // namespace critspec

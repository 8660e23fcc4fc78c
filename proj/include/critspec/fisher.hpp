#pragma once

#include <span>
#include <string>
#include <vector>

#include "critspec/network.hpp"
#include "critspec/numerics/rng.hpp"
#include "critspec/numerics/spectral.hpp"

namespace critspec {

// ---------------------------------------------------------------------------
// Empirical Fisher information over the hidden-layer parameters
//
//   G = (1/|D|) sum_i J_theta,i^T H_g(h^g_i) J_theta,i
//
// with H_g the output-layer Hessian of the negative log-likelihood. The
// readout W^g, b^g is not part of theta.
// ---------------------------------------------------------------------------

/// Dense G. Throws ShapeError above kDenseParameterCap parameters.
Matrix empirical_fim_dense(const NetworkState& net, const Matrix& inputs);

/// Matrix-free v -> G v, factored through the per-sample PSD square root of
/// H_g so the operator is symmetric by construction.
class FimOperator {
 public:
  FimOperator(const NetworkState& net, const Matrix& inputs);

  Eigen::Index dim() const { return dim_; }
  void apply(const Vector& v, Vector& out) const;
  LinearOperator as_operator() const;

 private:
  const NetworkState* net_;
  ForwardTrace trace_;
  std::vector<Matrix> hessian_sqrt_;  // empty for the Gaussian head
  Eigen::Index dim_;
};

enum class EigenMethod { automatic, dense, power_iteration };

/// lambda_max(G). Automatic uses a dense eigensolver up to kDenseEigenLimit
/// parameters and power iteration above.
double fim_lambda_max(const NetworkState& net, const Matrix& inputs, const PowerIterationOptions& options,
                      RngStream rng, EigenMethod method = EigenMethod::automatic);

/// Smallest eigenvalue of a dense symmetric PSD matrix by shifted inverse
/// iteration.
double fim_lambda_min_dense(const Matrix& fim);

/// (1/|D|) sum_i (J^{h^g}_a)^T H_g J^{h^g}_b for two parameter blocks.
Matrix fim_block(const NetworkState& net, const Matrix& inputs, const BlockLabel& a, const BlockLabel& b);

// ---------------------------------------------------------------------------
// Block Gershgorin
// ---------------------------------------------------------------------------

struct BlockPartition {
  /// p_0 = 0 < p_1 < ... < p_n = dimension.
  std::vector<Eigen::Index> boundaries;
  std::vector<std::string> labels;

  std::size_t num_blocks() const { return boundaries.empty() ? 0 : boundaries.size() - 1; }
  Eigen::Index block_size(std::size_t i) const { return boundaries[i + 1] - boundaries[i]; }
  /// Throws ShapeError unless boundaries are strictly increasing from 0 to dim.
  void validate(Eigen::Index dim) const;

  static BlockPartition from_layout(const HiddenParameterLayout& layout);
};

/// Per-pair spectral data: lambda_max of every diagonal block and s_max of
/// every off-diagonal block (the diagonal of offdiag_sigma_max is ignored).
struct BlockSpectrumGrid {
  std::vector<double> diag_lambda_max;
  Matrix offdiag_sigma_max;
};

BlockSpectrumGrid block_spectra(const Matrix& a, const BlockPartition& partition);

struct GershgorinReport {
  std::vector<double> per_block_lambda_max;
  Matrix per_pair_sigma_max;
  std::vector<double> disk_centers;
  std::vector<double> disk_radii;
  double bound = 0.0;
  std::size_t dominant_block = 0;
};

/// lambda_max(A) <= max_i [lambda_max(A_ii) + sum_{j != i} s_max(A_ij)].
GershgorinReport block_gershgorin(const BlockSpectrumGrid& grid, const BlockPartition& partition);
GershgorinReport block_gershgorin(const Matrix& a, const BlockPartition& partition);

// ---------------------------------------------------------------------------
// Analytic Sigma_max bounds on FIM blocks touching the first layer
// ---------------------------------------------------------------------------

struct SigmaMaxBoundInputs {
  int n_beta = 0;                       ///< hidden width N^beta
  double abs_mean_phi = 0.0;            ///< |E[phi(h)]|
  double mean_x0_norm = 0.0;            ///< ||E[x^0]||_2
  double cov_x0_sigma_max = 0.0;        ///< sigma_max(Cov[x^0, x^0])
  std::vector<double> smax_J_to_layer;  ///< E[sigma_max(J^{h^g}_{h^alpha})], alpha = 1..L
  double smax_Hg = 0.0;                 ///< E[sigma_max(H_g)]

  void validate(int depth) const;
};

/// Entries for beta = 2..L are stored at index beta - 2.
struct SigmaMaxTable {
  double b1_b1 = 0.0;
  double w1_w1 = 0.0;
  std::vector<double> w1_wbeta;
  std::vector<double> w1_bbeta;
  std::vector<double> b1_wbeta;
  std::vector<double> b1_bbeta;
};

SigmaMaxTable sigma_max_bounds(const SigmaMaxBoundInputs& inputs, int depth);

enum class BoundBranch { bias, weight };
std::string to_string(BoundBranch b);

struct TheoremBound {
  BoundBranch branch = BoundBranch::bias;
  double bound = 0.0;
};

/// Disk centred on b^1 when ||E[x^0]|| <= 1, otherwise on vec(W^1); radii
/// sum the Sigma_max of blocks pairing the centre with layers 2..L.
TheoremBound theorem_bound(const SigmaMaxBoundInputs& inputs, int depth);

/// Measures the bound inputs on one network over a data sample: per-sample
/// sigma_max averaged over samples, empirical mean of the hidden activations,
/// and first/second moments of the inputs.
SigmaMaxBoundInputs measure_bound_inputs(const NetworkState& net, const Matrix& inputs);

/// Field-wise mean of several measurements (ensemble expectation).
SigmaMaxBoundInputs average_bound_inputs(std::span<const SigmaMaxBoundInputs> samples);

// ---------------------------------------------------------------------------
// Softmax output Hessian under Gaussian logits
// ---------------------------------------------------------------------------

struct HgDistribution {
  double q = 0.0;
  double mean = 0.0;
  double min = 0.0;
  double p05 = 0.0;
  double median = 0.0;
  double p95 = 0.0;
  double max = 0.0;
};

struct HgMonteCarloReport {
  std::vector<HgDistribution> per_q;
  /// True when successive means change direction somewhere along the grid.
  bool non_monotone = false;
};

/// Draws h^g ~ N(0, q I_K) n_samples times per q and records lambda_max of
/// the softmax Hessian.
HgMonteCarloReport hg_lambda_mc(std::span<const double> q_grid, int n_classes, int n_samples, RngStream rng);

// ---------------------------------------------------------------------------
// FIM drift along training
// ---------------------------------------------------------------------------

struct FimSnapshot {
  int epoch = 0;
  double lambda_max = 0.0;
  double lambda_min = 0.0;  ///< NaN when not estimated
  double drift_norm = 0.0;  ///< ||G_t - G_0||_2
};

struct DriftReport {
  std::vector<FimSnapshot> rows;
  double max_drift = 0.0;
  double lambda_max_ratio = 1.0;  ///< last / first lambda_max
  double early_jump = 1.0;        ///< lambda_max at the first epoch > 0 over epoch 0
};

DriftReport fim_drift(std::span<const FimSnapshot> snapshots);

/// ||A - B||_2 for two symmetric operators of equal dimension.
double operator_difference_norm(const LinearOperator& a, const LinearOperator& b, Eigen::Index dim,
                                const PowerIterationOptions& options, RngStream rng);

/// ||G(net_t) - G(net_0)||_2 on a fixed input batch, matrix-free.
double fim_difference_norm(const NetworkState& net_t, const NetworkState& net_0, const Matrix& inputs,
                           const PowerIterationOptions& options, RngStream rng);

}  // namespace critspec

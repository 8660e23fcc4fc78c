#include "critspec/fisher.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "critspec/errors.hpp"
#include "critspec/numerics/stats.hpp"

namespace critspec {

namespace {

double largest_singular_value(const Matrix& m) {
  // Gram of the short side; output Jacobians are N^g x N with small N^g.
  const Matrix gram = m.rows() <= m.cols() ? Matrix(m * m.transpose()) : Matrix(m.transpose() * m);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) throw NumericalError("largest_singular_value: eigen solve failed");
  return std::sqrt(std::max(eig.eigenvalues().maxCoeff(), 0.0));
}

}  // namespace

// --- dense and matrix-free FIM ------------------------------------------------

Matrix empirical_fim_dense(const NetworkState& net, const Matrix& inputs) {
  const Eigen::Index params = net.hidden_parameter_count();
  if (params > kDenseParameterCap)
    throw ShapeError("empirical_fim_dense: " + std::to_string(params) +
                     " parameters exceed the dense cap; use FimOperator / fim_lambda_max");
  const ForwardTrace trace = forward(net, inputs);
  const GlmHead head{net.head};
  const Eigen::Index k = net.output_dim();
  const Eigen::Index batch = trace.batch_size();
  if (batch == 0) throw ShapeError("empirical_fim_dense: empty dataset");
  Matrix stacked(k * batch, params);
  for (Eigen::Index i = 0; i < batch; ++i)
    stacked.middleRows(i * k, k) = head.hessian_sqrt(trace.output().col(i)) * hidden_parameter_jacobian(net, trace, i);
  Matrix g = stacked.transpose() * stacked / static_cast<double>(batch);
  return 0.5 * (g + g.transpose());
}

FimOperator::FimOperator(const NetworkState& net, const Matrix& inputs)
    : net_(&net), trace_(forward(net, inputs)), dim_(net.hidden_parameter_count()) {
  if (trace_.batch_size() == 0) throw ShapeError("FimOperator: empty dataset");
  if (net.head != HeadKind::gaussian_identity) {
    const GlmHead head{net.head};
    hessian_sqrt_.reserve(trace_.batch_size());
    for (Eigen::Index i = 0; i < trace_.batch_size(); ++i) hessian_sqrt_.push_back(head.hessian_sqrt(trace_.output().col(i)));
  }
}

void FimOperator::apply(const Vector& v, Vector& out) const {
  Matrix u = hidden_jvp(*net_, trace_, v);
  if (!hessian_sqrt_.empty()) {
    // S_i (S_i u_i) with S_i = H_g^{1/2}
    for (Eigen::Index i = 0; i < u.cols(); ++i) {
      const Vector s = hessian_sqrt_[i] * u.col(i);
      u.col(i) = hessian_sqrt_[i] * s;
    }
  }
  out = hidden_vjp(*net_, trace_, u) / static_cast<double>(trace_.batch_size());
}

LinearOperator FimOperator::as_operator() const {
  return [this](const Vector& x, Vector& y) { apply(x, y); };
}

double fim_lambda_max(const NetworkState& net, const Matrix& inputs, const PowerIterationOptions& options,
                      RngStream rng, EigenMethod method) {
  const Eigen::Index params = net.hidden_parameter_count();
  if (method == EigenMethod::automatic)
    method = params <= kDenseEigenLimit ? EigenMethod::dense : EigenMethod::power_iteration;
  if (method == EigenMethod::dense) return dense_max_eig(empirical_fim_dense(net, inputs));
  const FimOperator op(net, inputs);
  return power_iteration_max_eig(op.as_operator(), op.dim(), options, rng);
}

double fim_lambda_min_dense(const Matrix& fim) {
  if (fim.rows() != fim.cols() || fim.rows() == 0) throw ShapeError("fim_lambda_min_dense: need a square matrix");
  const double scale = std::max(fim.diagonal().cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  const double shift = 1e-10 * scale;
  Matrix shifted = fim;
  shifted.diagonal().array() += shift;
  Eigen::LDLT<Matrix> ldlt(shifted);
  if (ldlt.info() != Eigen::Success) throw NumericalError("fim_lambda_min_dense: factorization failed");

  Vector v = Vector::Ones(fim.rows()).normalized();
  double mu = 0.0;
  for (int it = 0; it < 500; ++it) {
    Vector w = ldlt.solve(v);
    const double next = v.dot(w);
    const double norm = w.norm();
    if (!std::isfinite(norm) || norm == 0.0) break;
    v = w / norm;
    if (it > 0 && std::abs(next - mu) <= 1e-12 * std::abs(next)) {
      mu = next;
      break;
    }
    mu = next;
  }
  if (!(mu > 0.0)) throw NumericalError("fim_lambda_min_dense: inverse iteration failed");
  return 1.0 / mu - shift;
}

Matrix fim_block(const NetworkState& net, const Matrix& inputs, const BlockLabel& a, const BlockLabel& b) {
  const ForwardTrace trace = forward(net, inputs);
  const GlmHead head{net.head};
  const Eigen::Index batch = trace.batch_size();
  if (batch == 0) throw ShapeError("fim_block: empty dataset");
  Matrix acc;
  for (Eigen::Index i = 0; i < batch; ++i) {
    const Matrix ja = ParamJacobianBlock(net, trace, a, i).dense();
    const Matrix jb = ParamJacobianBlock(net, trace, b, i).dense();
    const Matrix term = ja.transpose() * head.hessian(trace.output().col(i)) * jb;
    if (i == 0)
      acc = term;
    else
      acc += term;
  }
  return acc / static_cast<double>(batch);
}

// --- block Gershgorin -----------------------------------------------------------

void BlockPartition::validate(Eigen::Index dim) const {
  if (boundaries.size() < 2 || boundaries.front() != 0) throw ShapeError("BlockPartition: must start at 0");
  for (std::size_t i = 1; i < boundaries.size(); ++i)
    if (boundaries[i] <= boundaries[i - 1]) throw ShapeError("BlockPartition: boundaries must be strictly increasing");
  if (boundaries.back() != dim) throw ShapeError("BlockPartition: final boundary must equal the matrix dimension");
  if (!labels.empty() && labels.size() != num_blocks()) throw ShapeError("BlockPartition: label count mismatch");
}

BlockPartition BlockPartition::from_layout(const HiddenParameterLayout& layout) {
  BlockPartition p;
  p.boundaries = layout.boundaries();
  for (const BlockLabel& label : layout.blocks()) p.labels.push_back(to_string(label));
  return p;
}

BlockSpectrumGrid block_spectra(const Matrix& a, const BlockPartition& partition) {
  if (a.rows() != a.cols()) throw ShapeError("block_spectra: matrix must be square");
  partition.validate(a.rows());
  const std::size_t n = partition.num_blocks();
  BlockSpectrumGrid grid;
  grid.diag_lambda_max.resize(n);
  grid.offdiag_sigma_max = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const auto block = a.block(partition.boundaries[i], partition.boundaries[j], partition.block_size(i),
                                 partition.block_size(j));
      if (i == j)
        grid.diag_lambda_max[i] = dense_max_eig(0.5 * (block + block.transpose()));
      else
        grid.offdiag_sigma_max(i, j) = spectral_norm(block);
    }
  }
  return grid;
}

GershgorinReport block_gershgorin(const BlockSpectrumGrid& grid, const BlockPartition& partition) {
  const std::size_t n = partition.num_blocks();
  if (n == 0 || grid.diag_lambda_max.size() != n || grid.offdiag_sigma_max.rows() != static_cast<Eigen::Index>(n) ||
      grid.offdiag_sigma_max.cols() != static_cast<Eigen::Index>(n))
    throw ShapeError("block_gershgorin: spectral grid does not match the partition");
  GershgorinReport report;
  report.per_block_lambda_max = grid.diag_lambda_max;
  report.per_pair_sigma_max = grid.offdiag_sigma_max;
  report.bound = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    double radius = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double s = grid.offdiag_sigma_max(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      if (s < 0.0) throw ShapeError("block_gershgorin: negative singular value");
      radius += s;
    }
    report.disk_centers.push_back(grid.diag_lambda_max[i]);
    report.disk_radii.push_back(radius);
    if (grid.diag_lambda_max[i] + radius > report.bound) {
      report.bound = grid.diag_lambda_max[i] + radius;
      report.dominant_block = i;
    }
  }
  return report;
}

GershgorinReport block_gershgorin(const Matrix& a, const BlockPartition& partition) {
  return block_gershgorin(block_spectra(a, partition), partition);
}

// --- Sigma_max bounds ---------------------------------------------------------------

void SigmaMaxBoundInputs::validate(int depth) const {
  if (depth < 1) throw ShapeError("SigmaMaxBoundInputs: depth must be >= 1");
  if (static_cast<int>(smax_J_to_layer.size()) < depth)
    throw ShapeError("SigmaMaxBoundInputs: need E[sigma_max(J)] for every hidden layer");
  auto ok = [](double v) { return std::isfinite(v) && v >= 0.0; };
  if (n_beta < 0 || !ok(abs_mean_phi) || !ok(mean_x0_norm) || !ok(cov_x0_sigma_max) || !ok(smax_Hg))
    throw ShapeError("SigmaMaxBoundInputs: fields must be finite and nonnegative");
  for (double v : smax_J_to_layer)
    if (!ok(v)) throw ShapeError("SigmaMaxBoundInputs: fields must be finite and nonnegative");
}

SigmaMaxTable sigma_max_bounds(const SigmaMaxBoundInputs& in, int depth) {
  in.validate(depth);
  const double j1 = in.smax_J_to_layer[0];
  const double hg = in.smax_Hg;
  const double root_n = std::sqrt(static_cast<double>(in.n_beta));
  SigmaMaxTable t;
  t.b1_b1 = hg * j1 * j1;
  t.w1_w1 = in.cov_x0_sigma_max * hg * j1 * j1;
  for (int beta = 2; beta <= depth; ++beta) {
    const double chain = j1 * hg * in.smax_J_to_layer[beta - 1];
    t.w1_wbeta.push_back(root_n * in.abs_mean_phi * in.mean_x0_norm * chain);
    t.w1_bbeta.push_back(in.abs_mean_phi * chain);
    t.b1_wbeta.push_back(in.abs_mean_phi * chain);
    t.b1_bbeta.push_back(chain);
  }
  return t;
}

std::string to_string(BoundBranch b) { return b == BoundBranch::bias ? "bias" : "weight"; }

TheoremBound theorem_bound(const SigmaMaxBoundInputs& inputs, int depth) {
  const SigmaMaxTable t = sigma_max_bounds(inputs, depth);
  TheoremBound out;
  if (inputs.mean_x0_norm <= 1.0) {
    out.branch = BoundBranch::bias;
    out.bound = t.b1_b1;
    for (std::size_t k = 0; k < t.b1_bbeta.size(); ++k) out.bound += t.b1_bbeta[k] + t.b1_wbeta[k];
  } else {
    out.branch = BoundBranch::weight;
    out.bound = t.w1_w1;
    for (std::size_t k = 0; k < t.w1_bbeta.size(); ++k) out.bound += t.w1_bbeta[k] + t.w1_wbeta[k];
  }
  return out;
}

SigmaMaxBoundInputs measure_bound_inputs(const NetworkState& net, const Matrix& inputs) {
  const ForwardTrace trace = forward(net, inputs);
  const int depth = net.depth();
  const Eigen::Index batch = trace.batch_size();
  if (batch < 2) throw ShapeError("measure_bound_inputs: need at least two samples");

  SigmaMaxBoundInputs out;
  out.n_beta = depth >= 2 ? net.widths[2] : net.widths[1];
  out.smax_J_to_layer.assign(depth, 0.0);
  double hg_sum = 0.0;
  for (Eigen::Index i = 0; i < batch; ++i) {
    Matrix j = net.weights.back();
    for (int l = depth; l >= 1; --l) {
      j = j * trace.derivatives[l - 1].col(i).asDiagonal();
      out.smax_J_to_layer[l - 1] += largest_singular_value(j);
      j = j * net.weight(l);
    }
    hg_sum += dense_max_eig(head_hessian(net.head, trace.output().col(i)));
  }
  for (double& v : out.smax_J_to_layer) v /= static_cast<double>(batch);
  out.smax_Hg = hg_sum / static_cast<double>(batch);

  double act_sum = 0.0;
  double act_count = 0.0;
  for (int l = 1; l <= depth; ++l) {
    act_sum += trace.activations[l].sum();
    act_count += static_cast<double>(trace.activations[l].size());
  }
  out.abs_mean_phi = std::abs(act_sum / act_count);

  const Vector mean_x0 = inputs.rowwise().mean();
  out.mean_x0_norm = mean_x0.norm();
  const Matrix centered = inputs.colwise() - mean_x0;
  const Matrix cov = centered * centered.transpose() / static_cast<double>(batch - 1);
  out.cov_x0_sigma_max = std::max(dense_max_eig(cov), 0.0);
  return out;
}

SigmaMaxBoundInputs average_bound_inputs(std::span<const SigmaMaxBoundInputs> samples) {
  if (samples.empty()) throw ShapeError("average_bound_inputs: no samples");
  SigmaMaxBoundInputs out = samples.front();
  const double n = static_cast<double>(samples.size());
  for (std::size_t s = 1; s < samples.size(); ++s) {
    const auto& x = samples[s];
    if (x.smax_J_to_layer.size() != out.smax_J_to_layer.size())
      throw ShapeError("average_bound_inputs: depth mismatch");
    out.abs_mean_phi += x.abs_mean_phi;
    out.mean_x0_norm += x.mean_x0_norm;
    out.cov_x0_sigma_max += x.cov_x0_sigma_max;
    out.smax_Hg += x.smax_Hg;
    for (std::size_t l = 0; l < out.smax_J_to_layer.size(); ++l) out.smax_J_to_layer[l] += x.smax_J_to_layer[l];
  }
  out.abs_mean_phi /= n;
  out.mean_x0_norm /= n;
  out.cov_x0_sigma_max /= n;
  out.smax_Hg /= n;
  for (double& v : out.smax_J_to_layer) v /= n;
  return out;
}

// --- H_g Monte Carlo ------------------------------------------------------------------

HgMonteCarloReport hg_lambda_mc(std::span<const double> q_grid, int n_classes, int n_samples, RngStream rng) {
  if (n_samples < 1000) throw ShapeError("hg_lambda_mc: need at least 1000 samples per q");
  if (n_classes < 2) throw ShapeError("hg_lambda_mc: need at least two classes");
  HgMonteCarloReport report;
  for (std::size_t qi = 0; qi < q_grid.size(); ++qi) {
    const double q = q_grid[qi];
    if (!(q > 0.0)) throw ShapeError("hg_lambda_mc: q must be positive");
    Rng gen(rng.substream(qi));
    std::vector<double> lambdas(n_samples);
    const double scale = std::sqrt(q);
    for (int s = 0; s < n_samples; ++s)
      lambdas[s] = dense_max_eig(head_hessian(HeadKind::softmax, scale * gen.normal_vector(n_classes)));
    HgDistribution d;
    d.q = q;
    d.mean = mean(lambdas);
    d.min = *std::min_element(lambdas.begin(), lambdas.end());
    d.max = *std::max_element(lambdas.begin(), lambdas.end());
    d.p05 = quantile(lambdas, 0.05);
    d.median = quantile(lambdas, 0.5);
    d.p95 = quantile(lambdas, 0.95);
    report.per_q.push_back(d);
  }
  int last_sign = 0;
  for (std::size_t i = 1; i < report.per_q.size(); ++i) {
    const double diff = report.per_q[i].mean - report.per_q[i - 1].mean;
    const int sign = diff > 0.0 ? 1 : (diff < 0.0 ? -1 : 0);
    if (sign == 0) continue;
    if (last_sign != 0 && sign != last_sign) report.non_monotone = true;
    last_sign = sign;
  }
  return report;
}

// --- drift ------------------------------------------------------------------------------

DriftReport fim_drift(std::span<const FimSnapshot> snapshots) {
  DriftReport report;
  report.rows.assign(snapshots.begin(), snapshots.end());
  for (std::size_t i = 1; i < report.rows.size(); ++i)
    if (report.rows[i].epoch <= report.rows[i - 1].epoch) throw ShapeError("fim_drift: snapshots must be ordered by epoch");
  if (report.rows.empty()) return report;
  for (const auto& r : report.rows) report.max_drift = std::max(report.max_drift, r.drift_norm);
  const double first = report.rows.front().lambda_max;
  if (first > 0.0) {
    report.lambda_max_ratio = report.rows.back().lambda_max / first;
    if (report.rows.size() > 1) report.early_jump = report.rows[1].lambda_max / first;
  }
  return report;
}

double operator_difference_norm(const LinearOperator& a, const LinearOperator& b, Eigen::Index dim,
                                const PowerIterationOptions& options, RngStream rng) {
  Vector tmp(dim);
  LinearOperator diff = [&](const Vector& x, Vector& y) {
    a(x, y);
    b(x, tmp);
    y -= tmp;
  };
  return symmetric_operator_norm(diff, dim, options, rng);
}

double fim_difference_norm(const NetworkState& net_t, const NetworkState& net_0, const Matrix& inputs,
                           const PowerIterationOptions& options, RngStream rng) {
  if (net_t.widths != net_0.widths) throw ShapeError("fim_difference_norm: architectures differ");
  const FimOperator gt(net_t, inputs);
  const FimOperator g0(net_0, inputs);
  return operator_difference_norm(gt.as_operator(), g0.as_operator(), gt.dim(), options, rng);
}

}  // namespace critspec

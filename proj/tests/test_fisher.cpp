#include <doctest.h>

#include <cmath>
#include <limits>

#include "critspec/errors.hpp"
#include "critspec/fisher.hpp"
#include "critspec/meanfield.hpp"
#include "critspec/ntk.hpp"
#include "critspec/numerics/stats.hpp"
#include "helpers.hpp"

using namespace critspec;
using testing::random_inputs;
using testing::random_net;
using testing::rel_err;

namespace {

NetworkState linear_one_layer(int in, int width, HeadKind head) {
  auto net = NetworkState::zeros({in, width, width}, Activation::identity, head);
  Rng rng(RngStream{1, 1});
  net.weights[0] = rng.normal_matrix(width, in);
  net.weights[1] = Matrix::Identity(width, width);
  return net;
}

Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

// Stacked per-sample factor S_i J_a,i (rows N^g * B) for one parameter block.
Matrix stacked_block_factor(const NetworkState& net, const ForwardTrace& t, const BlockLabel& label) {
  const GlmHead head{net.head};
  const Eigen::Index k = net.output_dim();
  Matrix m;
  for (Eigen::Index i = 0; i < t.batch_size(); ++i) {
    const Matrix j = head.hessian_sqrt(t.output().col(i)) * ParamJacobianBlock(net, t, label, i).dense();
    if (i == 0) m.resize(k * t.batch_size(), j.cols());
    m.middleRows(i * k, k) = j;
  }
  return m / std::sqrt(static_cast<double>(t.batch_size()));
}

// sigma_max(M_a^T M_b) through the small Gram matrices M M^T.
double cross_sigma_max(const Matrix& ma, const Matrix& mb) {
  const Matrix ga = ma * ma.transpose();
  const Matrix gb = mb * mb.transpose();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gb);
  const Matrix root = eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                      eig.eigenvectors().transpose();
  return std::sqrt(std::max(dense_max_eig(root * ga * root), 0.0));
}

}  // namespace

TEST_CASE("FIM of a single linear layer is a Kronecker product") {
  const auto net = linear_one_layer(3, 4, HeadKind::gaussian_identity);
  const Matrix x = random_inputs(3, 1, 1);
  const Matrix g = empirical_fim_dense(net, x);
  CHECK(rel_err(Matrix(g.topLeftCorner(12, 12)), kron(x * x.transpose(), Matrix::Identity(4, 4))) < 1e-15);

  const auto soft = linear_one_layer(3, 4, HeadKind::softmax);
  const Matrix zero = Matrix::Zero(3, 1);
  const Matrix gs = empirical_fim_dense(soft, zero);
  CHECK(rel_err(Matrix(gs.bottomRightCorner(4, 4)), head_hessian(HeadKind::softmax, Vector::Zero(4))) < 1e-15);
}

TEST_CASE("dense FIM equals the normalized unfolding Gram and is PSD") {
  for (HeadKind head : {HeadKind::gaussian_identity, HeadKind::softmax}) {
    const auto net = random_net({4, 6, 5, 6, 3}, Activation::tanh, head, 2);
    const Matrix x = random_inputs(4, 5, 3);
    const Matrix g = empirical_fim_dense(net, x);
    const auto eig = symmetric_eigenvalues(g);
    CHECK(eig.back() >= -1e-10 * eig.front());
    CHECK((g - g.transpose()).norm() == 0.0);
    if (head == HeadKind::gaussian_identity) {
      const Unfolding u = build_unfolding(net, x);
      CHECK(rel_err(g, Matrix(u.A * u.A.transpose() / 5.0)) < 1e-12);
    }
  }
}

TEST_CASE("matrix-free FIM operator matches the dense product") {
  for (HeadKind head : {HeadKind::gaussian_identity, HeadKind::softmax}) {
    const auto net = random_net({8, 8, 8, 8, 4}, Activation::tanh, head, 4);
    const Matrix x = random_inputs(8, 6, 5);
    const Matrix g = empirical_fim_dense(net, x);
    const FimOperator op(net, x);
    Rng rng(RngStream{6, 0});
    for (int trial = 0; trial < 5; ++trial) {
      const Vector v = rng.normal_vector(op.dim());
      Vector out;
      op.apply(v, out);
      CHECK(rel_err(Matrix(out), Matrix(g * v)) < 1e-8);
    }
  }
}

TEST_CASE("fim_lambda_max") {
  const auto net = random_net({6, 10, 10, 10, 5}, Activation::tanh, HeadKind::softmax, 7);
  const Matrix x = random_inputs(6, 8, 8);
  PowerIterationOptions opts;
  opts.tol = 1e-12;
  opts.max_iter = 5000;
  const double dense = fim_lambda_max(net, x, opts, RngStream{1, 0}, EigenMethod::dense);
  const double power = fim_lambda_max(net, x, opts, RngStream{1, 0}, EigenMethod::power_iteration);
  CHECK(rel_err(dense, power) < 1e-6);
  CHECK(dense == fim_lambda_max(net, x, opts, RngStream{1, 0}));

  // dataset permutation invariance
  Matrix perm(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.cols(); ++i) perm.col(i) = x.col(x.cols() - 1 - i);
  CHECK(rel_err(dense, fim_lambda_max(net, perm, opts, RngStream{1, 0}, EigenMethod::dense)) < 1e-12);

  // a zero readout kills every output direction
  auto dead = net;
  dead.weights.back().setZero();
  CHECK(fim_lambda_max(dead, x, opts, RngStream{1, 0}, EigenMethod::power_iteration) == 0.0);

  // readout scaling by c scales the Gaussian-head FIM by c^2
  auto g1 = random_net({5, 7, 3}, Activation::tanh, HeadKind::gaussian_identity, 9);
  const Matrix x1 = random_inputs(5, 1, 10);
  const double base = fim_lambda_max(g1, x1, opts, RngStream{1, 0});
  g1.weights.back() *= 3.0;
  CHECK(rel_err(fim_lambda_max(g1, x1, opts, RngStream{1, 0}), 9.0 * base) < 1e-12);
}

TEST_CASE("lambda_min on the dense path") {
  Rng rng(RngStream{11, 0});
  const Matrix a = rng.normal_matrix(12, 12);
  const Matrix spd = a * a.transpose() + 0.5 * Matrix::Identity(12, 12);
  CHECK(rel_err(fim_lambda_min_dense(spd), symmetric_eigenvalues(spd).back()) < 1e-8);
  const Matrix b = rng.normal_matrix(12, 4);
  const Matrix deficient = b * b.transpose();
  CHECK(std::abs(fim_lambda_min_dense(deficient)) < 1e-8 * dense_max_eig(deficient));
}

TEST_CASE("fim_block consistency") {
  auto lin = random_net({3, 4, 4, 2}, Activation::identity, HeadKind::softmax, 12);
  const Matrix x = random_inputs(3, 6, 13);
  const ForwardTrace t = forward(lin, x);
  Matrix expected = Matrix::Zero(4, 4);
  for (Eigen::Index i = 0; i < 6; ++i)
    expected += lin.weights.back().transpose() * head_hessian(HeadKind::softmax, t.output().col(i)) *
                lin.weights.back();
  CHECK(rel_err(fim_block(lin, x, {2, ParamKind::bias}, {2, ParamKind::bias}), Matrix(expected / 6.0)) < 1e-13);

  const auto net = random_net({4, 5, 6, 3}, Activation::tanh, HeadKind::softmax, 14);
  const Matrix xs = random_inputs(4, 5, 15);
  const Matrix g = empirical_fim_dense(net, xs);
  const HiddenParameterLayout layout(net);
  for (const BlockLabel& a : layout.blocks())
    for (const BlockLabel& b : layout.blocks()) {
      const Matrix blk = fim_block(net, xs, a, b);
      const Matrix sub = g.block(layout.offset(a), layout.offset(b), layout.length(a), layout.length(b));
      CHECK((blk - sub).cwiseAbs().maxCoeff() < 1e-12);
    }

  const Matrix x1 = random_inputs(4, 1, 16);
  const ForwardTrace t1 = forward(net, x1);
  const Matrix j1 = output_jacobian(t1, net, 1, 0);
  const Matrix inner = j1.transpose() * head_hessian(HeadKind::softmax, t1.output().col(0)) * j1;
  const Matrix w1 = fim_block(net, x1, {1, ParamKind::weights}, {1, ParamKind::weights});
  CHECK(rel_err(w1, kron(x1 * x1.transpose(), inner)) < 1e-12);
}

TEST_CASE("block Gershgorin") {
  BlockPartition p;
  p.boundaries = {0, 1, 2};
  Matrix a(2, 2);
  a << 2, 1, 1, 2;
  const GershgorinReport r = block_gershgorin(a, p);
  CHECK(std::abs(r.bound - 3.0) < 1e-15);
  CHECK(std::abs(dense_max_eig(a) - 3.0) < 1e-14);

  Rng rng(RngStream{17, 0});
  for (int trial = 0; trial < 100; ++trial) {
    const int dim = 2 + static_cast<int>(rng.below(199));
    const Matrix f = rng.normal_matrix(dim, 1 + static_cast<int>(rng.below(dim)));
    const Matrix m = f * f.transpose();
    BlockPartition part;
    part.boundaries = {0};
    while (part.boundaries.back() < dim)
      part.boundaries.push_back(std::min<Eigen::Index>(dim, part.boundaries.back() + 1 + rng.below(40)));
    CHECK(dense_max_eig(m) <= block_gershgorin(m, part).bound * (1 + 1e-12));

    Matrix diag = m;
    for (std::size_t i = 0; i < part.num_blocks(); ++i)
      for (std::size_t j = 0; j < part.num_blocks(); ++j)
        if (i != j)
          diag.block(part.boundaries[i], part.boundaries[j], part.block_size(i), part.block_size(j)).setZero();
    CHECK(rel_err(block_gershgorin(diag, part).bound, dense_max_eig(diag)) < 1e-12);
  }

  BlockPartition bad;
  bad.boundaries = {0, 3, 2};
  CHECK_THROWS_AS(bad.validate(2), ShapeError);
  bad.boundaries = {0, 1};
  CHECK_THROWS_AS(block_gershgorin(a, bad), ShapeError);
}

TEST_CASE("Sigma_max bound table") {
  SigmaMaxBoundInputs in;
  in.n_beta = 16;
  in.abs_mean_phi = 0.0;
  in.mean_x0_norm = 0.5;
  in.cov_x0_sigma_max = 1.0;
  in.smax_J_to_layer = {1.0, 1.0, 1.0};
  in.smax_Hg = 1.0;
  SigmaMaxTable t = sigma_max_bounds(in, 3);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(t.w1_wbeta[k] == 0.0);
    CHECK(t.w1_bbeta[k] == 0.0);
    CHECK(t.b1_wbeta[k] == 0.0);
    CHECK(t.b1_bbeta[k] == 1.0);
  }
  in.smax_Hg = 0.5;
  in.smax_J_to_layer = {2.0, 1.0, 1.0};
  CHECK(sigma_max_bounds(in, 3).b1_b1 == doctest::Approx(2.0));

  const TheoremBound tb = theorem_bound(in, 3);
  CHECK(tb.branch == BoundBranch::bias);
  in.mean_x0_norm = 1.5;
  CHECK(theorem_bound(in, 3).branch == BoundBranch::weight);

  SigmaMaxBoundInputs one = in;
  one.smax_J_to_layer = {2.0};
  one.mean_x0_norm = 0.2;
  CHECK(theorem_bound(one, 1).bound == doctest::Approx(sigma_max_bounds(one, 1).b1_b1));
  one.mean_x0_norm = 3.0;
  CHECK(theorem_bound(one, 1).bound == doctest::Approx(sigma_max_bounds(one, 1).w1_w1));

  in.smax_J_to_layer = {1.0};
  CHECK_THROWS_AS(sigma_max_bounds(in, 3), ShapeError);
}

TEST_CASE("measured Sigma_max bounds against measured FIM blocks") {
  // Width 64, depth 8, 10 critical orthogonal seeds; blocks of the first
  // layer against every layer beta, compared on the ensemble mean.
  const int width = 64, depth = 8, classes = 10, in_dim = 8, batch = 20, seeds = 10;
  const MeanFieldSolution sol = solve_critical(1.0 / 64.0, Activation::tanh);
  SigmaMaxTable mean_bound;
  std::vector<double> b1b1, w1w1;
  std::vector<std::vector<double>> w1wb(depth - 1), w1bb(depth - 1), b1wb(depth - 1), b1bb(depth - 1);
  std::vector<SigmaMaxBoundInputs> inputs;
  for (int s = 0; s < seeds; ++s) {
    std::vector<int> widths{in_dim};
    for (int l = 0; l < depth; ++l) widths.push_back(width);
    widths.push_back(classes);
    auto net = NetworkState::zeros(widths, Activation::tanh, HeadKind::softmax);
    Rng rng(RngStream{static_cast<std::uint64_t>(s), 31});
    for (int l = 1; l <= depth; ++l) {
      net.weights[l - 1] = sample_weights(widths[l], widths[l - 1], WeightInit::orthogonal, sol.sigma_w, rng);
      net.biases[l - 1] = sol.sigma_b * rng.normal_vector(widths[l]);
    }
    net.weights[depth] = sample_weights(width, classes, WeightInit::orthogonal, sol.sigma_w, rng).transpose();
    Matrix x = rng.normal_matrix(in_dim, batch);
    x *= std::sqrt(input_norm_squared_target(sol, width)) / x.colwise().norm().mean();
    inputs.push_back(measure_bound_inputs(net, x));
    const ForwardTrace t = forward(net, x);
    const Matrix mw1 = stacked_block_factor(net, t, {1, ParamKind::weights});
    const Matrix mb1 = stacked_block_factor(net, t, {1, ParamKind::bias});
    b1b1.push_back(cross_sigma_max(mb1, mb1));
    w1w1.push_back(cross_sigma_max(mw1, mw1));
    for (int beta = 2; beta <= depth; ++beta) {
      const Matrix mwb = stacked_block_factor(net, t, {beta, ParamKind::weights});
      const Matrix mbb = stacked_block_factor(net, t, {beta, ParamKind::bias});
      w1wb[beta - 2].push_back(cross_sigma_max(mw1, mwb));
      w1bb[beta - 2].push_back(cross_sigma_max(mw1, mbb));
      b1wb[beta - 2].push_back(cross_sigma_max(mb1, mwb));
      b1bb[beta - 2].push_back(cross_sigma_max(mb1, mbb));
    }
  }
  const SigmaMaxTable bound = sigma_max_bounds(average_bound_inputs(inputs), depth);
  auto avg = [](const std::vector<double>& v) { return mean(v); };
  CHECK(avg(b1b1) <= bound.b1_b1);
  CHECK(avg(w1w1) <= bound.w1_w1);
  for (int k = 0; k < depth - 1; ++k) {
    CHECK(avg(b1bb[k]) <= bound.b1_bbeta[k]);
    CHECK(avg(b1wb[k]) <= bound.b1_wbeta[k]);
    CHECK(avg(w1bb[k]) <= bound.w1_bbeta[k]);
    CHECK(avg(w1wb[k]) <= bound.w1_wbeta[k]);
  }

  // Monotone growth of sigma_max(J^{h^g}_{h^alpha}) as alpha decreases; report only.
  const SigmaMaxBoundInputs m = average_bound_inputs(inputs);
  int violations = 0;
  for (int a = 1; a < depth; ++a) violations += m.smax_J_to_layer[a - 1] < m.smax_J_to_layer[a] ? 1 : 0;
  MESSAGE("monotonicity violations in E[sigma_max(J^{h^g}_{h^alpha})]: " << violations << " of " << depth - 1);
}

TEST_CASE("softmax Hessian Monte Carlo") {
  const std::vector<double> grid{1e-3, 1e-2, 0.1, 1.0, 10.0};
  const HgMonteCarloReport r = hg_lambda_mc(grid, 10, 2000, RngStream{1, 0});
  REQUIRE(r.per_q.size() == grid.size());
  for (const auto& d : r.per_q) {
    CHECK(d.min >= 0.0);
    CHECK(d.max <= 0.5);
    CHECK(d.min <= d.p05);
    CHECK(d.p05 <= d.median);
    CHECK(d.median <= d.p95);
    CHECK(d.p95 <= d.max);
  }
  // uniform softmax limit: lambda_max = 1/K
  const std::vector<double> tiny{1e-24};
  CHECK(std::abs(hg_lambda_mc(tiny, 2, 1000, RngStream{2, 0}).per_q[0].mean - 0.5) < 1e-9);
  CHECK(std::abs(hg_lambda_mc(tiny, 10, 1000, RngStream{2, 0}).per_q[0].mean - 0.1) < 1e-9);
  CHECK_THROWS_AS(hg_lambda_mc(grid, 10, 10, RngStream{1, 0}), ShapeError);
}

TEST_CASE("FIM drift") {
  std::vector<FimSnapshot> same{{0, 2.0, NAN, 0.0}, {5, 2.0, NAN, 0.0}};
  const DriftReport r = fim_drift(same);
  CHECK(r.max_drift == 0.0);
  CHECK(r.lambda_max_ratio == 1.0);

  std::vector<FimSnapshot> rows{{0, 1.0, NAN, 0.0}, {1, 3.0, NAN, 0.5}, {2, 2.0, NAN, 0.25}};
  const DriftReport r2 = fim_drift(rows);
  CHECK(r2.early_jump == 3.0);
  CHECK(r2.lambda_max_ratio == 2.0);
  CHECK(r2.max_drift == 0.5);
  std::vector<FimSnapshot> unordered{{2, 1.0, NAN, 0.0}, {1, 1.0, NAN, 0.0}};
  CHECK_THROWS_AS(fim_drift(unordered), ShapeError);

  const Vector d = (Vector(2) << 1.0, 2.0).finished();
  LinearOperator g0 = [&](const Vector& x, Vector& y) { y = d.cwiseProduct(x); };
  LinearOperator g1 = [&](const Vector& x, Vector& y) { y = 2.0 * d.cwiseProduct(x); };
  CHECK(std::abs(operator_difference_norm(g1, g0, 2, {}, RngStream{3, 0}) - 2.0) < 1e-6);
  CHECK(operator_difference_norm(g0, g0, 2, {}, RngStream{3, 0}) == 0.0);

  const auto net0 = random_net({5, 6, 6, 3}, Activation::tanh, HeadKind::softmax, 18);
  auto net1 = net0;
  Rng rng(RngStream{19, 0});
  for (auto& w : net1.weights) w += 0.05 * rng.normal_matrix(w.rows(), w.cols());
  const Matrix x = random_inputs(5, 7, 20);
  const Matrix diff = empirical_fim_dense(net1, x) - empirical_fim_dense(net0, x);
  const auto eig = symmetric_eigenvalues(diff);
  const double exact = std::max(std::abs(eig.front()), std::abs(eig.back()));
  PowerIterationOptions opts;
  opts.tol = 1e-13;
  opts.max_iter = 20000;
  CHECK(rel_err(fim_difference_norm(net1, net0, x, opts, RngStream{4, 0}), exact) < 1e-6);
}

#include <doctest.h>

#include "critspec/errors.hpp"
#include "critspec/manifold.hpp"
#include "critspec/meanfield.hpp"
#include "critspec/ntk.hpp"
#include "helpers.hpp"

using namespace critspec;
using testing::random_inputs;
using testing::random_net;
using testing::rel_err;

TEST_CASE("unfolding layout") {
  auto scalar = NetworkState::zeros({1, 1, 1}, Activation::identity, HeadKind::gaussian_identity);
  scalar.weights[0](0, 0) = 0.7;
  scalar.weights[1](0, 0) = 2.0;
  const Matrix x = Matrix::Constant(1, 1, 3.0);
  const Unfolding u = build_unfolding(scalar, x);
  REQUIRE(u.A.rows() == 2);
  CHECK(u.A(0, 0) == doctest::Approx(6.0));  // d h^g / d W^1 = W^g x
  CHECK(u.A(1, 0) == doctest::Approx(2.0));  // d h^g / d b^1

  const auto net = random_net({3, 4, 4, 2}, Activation::tanh, HeadKind::gaussian_identity, 1);
  Matrix twice(3, 2);
  twice.col(0) = random_inputs(3, 1, 2).col(0);
  twice.col(1) = twice.col(0);
  const Unfolding d = build_unfolding(net, twice);
  CHECK(d.A.middleCols(0, 2) == d.A.middleCols(2, 2));
  CHECK(d.column(1, 1) == 3);
}

TEST_CASE("empirical NTK") {
  Unfolding eye;
  eye.A = Matrix::Identity(4, 4);
  eye.outputs = 2;
  eye.samples = 2;
  CHECK(empirical_ntk(eye) == Matrix::Identity(4, 4));
  Unfolding orth;
  orth.A = orthonormal_factor(Matrix::Random(6, 3)) * Vector::LinSpaced(3, 1, 3).asDiagonal();
  orth.outputs = 3;
  orth.samples = 1;
  const Matrix k = empirical_ntk(orth);
  CHECK((k - Matrix(k.diagonal().asDiagonal())).cwiseAbs().maxCoeff() < 1e-14);

  const auto net = random_net({4, 5, 5, 3}, Activation::tanh, HeadKind::gaussian_identity, 3);
  const Matrix x = random_inputs(4, 4, 4);
  const Unfolding u = build_unfolding(net, x);
  const Matrix ntk = empirical_ntk(u);
  const ForwardTrace t = forward(net, x);
  for (Eigen::Index i = 0; i < 4; ++i)
    for (Eigen::Index j = 0; j < 4; ++j) {
      const Matrix ji = hidden_parameter_jacobian(net, t, i);
      const Matrix jj = hidden_parameter_jacobian(net, t, j);
      for (Eigen::Index a = 0; a < 3; ++a)
        for (Eigen::Index b = 0; b < 3; ++b)
          CHECK(std::abs(ntk(u.column(i, a), u.column(j, b)) - ji.row(a).dot(jj.row(b))) < 1e-12);
    }
  CHECK(rel_err(ntk.trace(), u.A.squaredNorm()) < 1e-12);
  CHECK(symmetric_eigenvalues(ntk).back() >= -1e-12 * symmetric_eigenvalues(ntk).front());

  // A^T A v through separate Jacobian-vector products
  Rng rng(RngStream{5, 0});
  const Vector v = rng.normal_vector(12);
  const Matrix cot = Eigen::Map<const Matrix>(v.data(), 3, 4);
  const Matrix two_path = hidden_jvp(net, t, hidden_vjp(net, t, cot));
  CHECK(rel_err(Matrix(Eigen::Map<const Vector>(two_path.data(), 12)), Matrix(ntk * v)) < 1e-12);

  // permutation of the dataset permutes the kernel
  Matrix xp(4, 4);
  for (int i = 0; i < 4; ++i) xp.col(i) = x.col(3 - i);
  const Matrix np = empirical_ntk(build_unfolding(net, xp));
  for (Eigen::Index i = 0; i < 4; ++i)
    for (Eigen::Index j = 0; j < 4; ++j)
      CHECK((np.block(3 * (3 - i), 3 * (3 - j), 3, 3) - ntk.block(3 * i, 3 * j, 3, 3)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("FIM and NTK spectra coincide for regression") {
  const auto net = random_net({8, 8, 8, 8, 8}, Activation::tanh, HeadKind::gaussian_identity, 6);
  const Matrix x = random_inputs(8, 4, 7);
  const SpectrumMatch m = spectrum_match(net, x);
  CHECK(m.discrepancy < 1e-8);
  CHECK(m.fim_spectrum.size() == m.ntk_spectrum.size());
  CHECK(m.ntk_spectrum.size() <= 32);
  CHECK(spectrum_match(net, x, true).discrepancy < 1e-8);

  auto soft = net;
  soft.head = HeadKind::softmax;
  CHECK_THROWS_AS(spectrum_match(soft, x), ConfigError);
}

TEST_CASE("NTK is deterministic and ignores the readout bias") {
  auto net = NetworkState::zeros({4, 4, 4, 4, 2}, Activation::identity, HeadKind::gaussian_identity);
  Rng rng(RngStream{8, 0});
  for (int l = 0; l < 3; ++l) net.weights[static_cast<std::size_t>(l)] = orthonormal_factor(rng.normal_matrix(4, 4));
  net.weights[3] = rng.normal_matrix(2, 4);
  const Matrix x = random_inputs(4, 3, 9);
  const Matrix k1 = empirical_ntk(build_unfolding(net, x));
  NetworkState copy = net;
  const Matrix k2 = empirical_ntk(build_unfolding(copy, x));
  CHECK(k1 == k2);
  // the readout bias enters no hidden-parameter Jacobian
  copy.biases.back() = rng.normal_vector(copy.biases.back().size());
  CHECK(empirical_ntk(build_unfolding(copy, x)) == k1);
}

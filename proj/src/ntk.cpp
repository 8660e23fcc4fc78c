#include "critspec/ntk.hpp"

#include <algorithm>
#include <cmath>

#include "critspec/errors.hpp"
#include "critspec/numerics/spectral.hpp"

namespace critspec {

Unfolding build_unfolding(const NetworkState& net, const Matrix& inputs) {
  const Eigen::Index params = net.hidden_parameter_count();
  const Eigen::Index k = net.output_dim();
  const Eigen::Index batch = inputs.cols();
  if (batch == 0) throw ShapeError("build_unfolding: empty dataset");
  if (params > kUnfoldingEntryCap / std::max<Eigen::Index>(k * batch, 1))
    throw ShapeError("build_unfolding: unfolding exceeds the dense entry cap");
  const ForwardTrace trace = forward(net, inputs);
  Unfolding u;
  u.outputs = k;
  u.samples = batch;
  u.A.resize(params, k * batch);
  for (Eigen::Index i = 0; i < batch; ++i)
    u.A.middleCols(i * k, k) = hidden_parameter_jacobian(net, trace, i).transpose();
  return u;
}

Matrix empirical_ntk(const Unfolding& unfolding, bool normalize) {
  Matrix g = unfolding.A.transpose() * unfolding.A;
  if (normalize) g /= static_cast<double>(unfolding.samples);
  return 0.5 * (g + g.transpose());
}

Matrix unfolding_fim(const Unfolding& unfolding, bool normalize) {
  Matrix g = unfolding.A * unfolding.A.transpose();
  if (normalize) g /= static_cast<double>(unfolding.samples);
  return 0.5 * (g + g.transpose());
}

namespace {

std::vector<double> nonzero_spectrum(const Matrix& gram, double floor) {
  std::vector<double> eig = symmetric_eigenvalues(gram);
  eig.erase(std::remove_if(eig.begin(), eig.end(), [floor](double v) { return v < floor; }), eig.end());
  return eig;
}

}  // namespace

SpectrumMatch spectrum_match(const NetworkState& net, const Matrix& inputs, bool normalize) {
  if (net.head != HeadKind::gaussian_identity)
    throw ConfigError("spectrum_match: the FIM/NTK identity needs the gaussian_identity head");
  const Unfolding u = build_unfolding(net, inputs);
  const Matrix fim = unfolding_fim(u, normalize);
  const Matrix ntk = empirical_ntk(u, normalize);
  const double top = std::max(dense_max_eig(ntk), 0.0);
  const double floor = 1e-10 * top;

  SpectrumMatch out;
  out.fim_spectrum = nonzero_spectrum(fim, floor);
  out.ntk_spectrum = nonzero_spectrum(ntk, floor);
  const std::size_t n = std::min(out.fim_spectrum.size(), out.ntk_spectrum.size());
  for (std::size_t i = 0; i < n; ++i)
    out.discrepancy =
        std::max(out.discrepancy, std::abs(out.fim_spectrum[i] - out.ntk_spectrum[i]) / out.ntk_spectrum[i]);
  // a mode surviving the floor on only one side counts as a full mismatch
  if (out.fim_spectrum.size() != out.ntk_spectrum.size()) out.discrepancy = std::max(out.discrepancy, 1.0);
  return out;
}

}  // namespace critspec

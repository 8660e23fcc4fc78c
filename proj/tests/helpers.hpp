#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "critspec/network.hpp"
#include "critspec/numerics/rng.hpp"

namespace testing {

using critspec::Matrix;
using critspec::Vector;

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

inline double rel_err(const Matrix& a, const Matrix& b) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-300});
}

/// Random network with N(0, scale^2 / fan_in) weights and N(0, 0.1^2) biases.
inline critspec::NetworkState random_net(std::vector<int> widths, critspec::Activation act, critspec::HeadKind head,
                                         std::uint64_t seed, double scale = 1.2) {
  auto net = critspec::NetworkState::zeros(widths, act, head);
  critspec::Rng rng(critspec::RngStream{seed, 99});
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    net.weights[l] = rng.normal_matrix(net.weights[l].rows(), net.weights[l].cols()) *
                     (scale / std::sqrt(static_cast<double>(net.weights[l].cols())));
    net.biases[l] = 0.1 * rng.normal_vector(net.biases[l].size());
  }
  return net;
}

inline Matrix random_inputs(int dim, int n, std::uint64_t seed) {
  critspec::Rng rng(critspec::RngStream{seed, 7});
  return rng.normal_matrix(dim, n);
}

}  // namespace testing

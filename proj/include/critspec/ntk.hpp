#pragma once

#include <vector>

#include "critspec/network.hpp"

namespace critspec {

/// Parameter-by-output unfolding. Column i * N^g + k holds the gradient of
/// output k of sample i with respect to the hidden parameters.
struct Unfolding {
  Matrix A;
  Eigen::Index outputs = 0;
  Eigen::Index samples = 0;

  Eigen::Index column(Eigen::Index sample, Eigen::Index output) const { return sample * outputs + output; }
};

inline constexpr Eigen::Index kUnfoldingEntryCap = Eigen::Index{1} << 26;

Unfolding build_unfolding(const NetworkState& net, const Matrix& inputs);

/// A^T A, optionally divided by the number of samples.
Matrix empirical_ntk(const Unfolding& unfolding, bool normalize = false);

/// The matching FIM-side Gram A A^T under the same normalization.
Matrix unfolding_fim(const Unfolding& unfolding, bool normalize = false);

struct SpectrumMatch {
  double discrepancy = 0.0;
  std::vector<double> fim_spectrum;  ///< nonzero, descending
  std::vector<double> ntk_spectrum;  ///< nonzero, descending
};

/// Compares the nonzero spectra of A A^T and A^T A. Eigenvalues below
/// 1e-10 * lambda_max are dropped. Gaussian head only.
SpectrumMatch spectrum_match(const NetworkState& net, const Matrix& inputs, bool normalize = false);

}  // namespace critspec

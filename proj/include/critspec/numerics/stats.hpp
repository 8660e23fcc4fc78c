#pragma once

#include <span>
#include <vector>

namespace critspec {

/// Sample Pearson correlation. Requires equal lengths >= 3 and nonzero
/// variance in both inputs.
double pearson(std::span<const double> xs, std::span<const double> ys);

double mean(std::span<const double> xs);

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
double stddev(std::span<const double> xs);

/// Linear-interpolated quantile, p in [0, 1].
double quantile(std::vector<double> xs, double p);

}  // namespace critspec

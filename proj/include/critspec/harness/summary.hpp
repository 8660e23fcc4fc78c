#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "critspec/harness/config.hpp"
#include "critspec/harness/experiment.hpp"

namespace critspec {

struct MetricAggregate {
  double mean = 0.0;
  double stddev = 0.0;  ///< zero for a single run
  int count = 0;
};

struct CurvePoint {
  int epoch = 0;
  MetricAggregate train_loss, test_accuracy, lambda_max_fim, sigma_max_j, sigma_min_j, mean_sq_sv_j, penalty,
      scale_mean;
};

/// Mean and stddev across the runs of one mode at every logged epoch.
std::vector<CurvePoint> mode_curves(const std::vector<RunRecord>& runs, TrainingMode mode);

/// Pearson correlation between sigma_max(J)^2 and lambda_max(FIM) over the
/// given rows; NaN with fewer than three rows or zero variance.
double sigma_lambda_correlation(const std::vector<MetricRow>& rows);

/// Per-mode curves, correlations, epoch-0 bound table and drift report.
nlohmann::json summarize(const std::vector<RunRecord>& runs, const ExperimentConfig& config);

/// mode,epoch,<metric>_mean,<metric>_std,... for every mode.
void write_curves_csv(const std::vector<RunRecord>& runs, const std::string& path);

}  // namespace critspec

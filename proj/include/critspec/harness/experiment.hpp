#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "critspec/fisher.hpp"
#include "critspec/harness/config.hpp"
#include "critspec/harness/dataset.hpp"
#include "critspec/meanfield.hpp"
#include "critspec/optimizer.hpp"

namespace critspec {

struct MetricRow {
  int epoch = 0;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  double lambda_max_fim = 0.0;
  double sigma_max_j = 0.0;
  double sigma_min_j = 0.0;
  double mean_sq_sv_j = 0.0;
  double penalty = 0.0;
  double scale_mean = 0.0;
  double scale_min = 0.0;
  double scale_max = 0.0;
};

struct RunRecord {
  TrainingMode mode = TrainingMode::euclidean;
  std::uint64_t seed = 0;
  std::vector<MetricRow> rows;
  bool aborted = false;
  std::string abort_reason;
  SigmaMaxBoundInputs bound_inputs;  ///< measured at epoch 0 on the probe batch
  TheoremBound theorem;
  double gershgorin_bound = 0.0;  ///< dense block bound at epoch 0, NaN above the dense limit
  std::vector<FimSnapshot> snapshots;
};

/// Critical (sigma_w, sigma_b) for the configured q*.
MeanFieldSolution critical_solution(const ExperimentConfig& config);

/// Target mean input norm that puts the first-layer variance at q*. Uses
/// the fan-in for Gaussian init and the fan-out for orthogonal init.
double input_norm_target(const ExperimentConfig& config, const MeanFieldSolution& sol, int input_dim);

/// Critical weights of the configured init kind including the readout,
/// N(0, sigma_b^2) hidden biases and a zero readout bias.
NetworkState build_network(const ExperimentConfig& config, const MeanFieldSolution& sol, int input_dim,
                           int output_dim, std::uint64_t seed);

struct JacobianStats {
  double sigma_max = 0.0;
  double sigma_min = 0.0;
  double mean_sq_sv = 0.0;
};

/// Spectral summary of dh^g/dx^0 per probe sample, averaged over the probe.
JacobianStats probe_jacobian_stats(const NetworkState& net, const Matrix& probe);

double accuracy(const NetworkState& net, const Dataset& data);

/// Loads and rescales the dataset for a config.
DatasetSplit prepare_dataset(const ExperimentConfig& config, const MeanFieldSolution& sol);

/// One (mode, seed) run on an already prepared dataset.
RunRecord run_single(const ExperimentConfig& config, TrainingMode mode, std::uint64_t seed, const DatasetSplit& data,
                     const MeanFieldSolution& sol);

struct ExperimentResult {
  std::vector<RunRecord> runs;  ///< mode-major, seed order within a mode
  nlohmann::json summary;
};

/// Runs every (mode, seed) pair on worker threads. With write set, emits
/// run_<mode>_seed<seed>.csv files and summary.json into output_dir.
ExperimentResult run_experiment(const ExperimentConfig& config, bool write = true);

std::string csv_header();
std::string to_csv(const RunRecord& record);
/// %.17g, with nan / inf spelled out.
std::string format_double(double v);

}  // namespace critspec

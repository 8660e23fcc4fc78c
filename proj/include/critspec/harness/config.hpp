#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "critspec/meanfield.hpp"
#include "critspec/network.hpp"
#include "critspec/optimizer.hpp"

namespace critspec {

enum class DatasetKind { synthetic, csv, cifar };
std::string to_string(DatasetKind kind);

struct DatasetSpec {
  DatasetKind kind = DatasetKind::synthetic;
  // file-backed kinds; an empty test path holds out the trailing fifth of train
  std::string train_path;
  std::string test_path;
  // synthetic
  int classes = 10;
  int dim = 128;
  int train_per_class = 500;
  int test_per_class = 100;
  double spread = 1.0;
  std::uint64_t seed = 0;
};

struct ExperimentConfig {
  int depth = 16;
  /// Hidden widths N^1..N^L. Empty means depth copies of width.
  std::vector<int> widths;
  int width = 128;
  Activation activation = Activation::tanh;
  HeadKind head = HeadKind::softmax;
  double q_star = 1.0 / 64.0;
  WeightInit init = WeightInit::orthogonal;
  std::vector<TrainingMode> modes{TrainingMode::euclidean};
  double penalty = 0.0;
  AdamHyper euclidean{1e-3, 0.9, 0.999, 1e-8};
  AdamHyper scale{1e-3, 0.9, 0.999, 1e-8};
  AdamHyper manifold{1e-2, 0.9, 0.999, 1e-8};
  int epochs = 50;
  int batch_size = 100;
  int stats_every = 5;
  std::vector<std::uint64_t> seeds{0};
  DatasetSpec dataset;
  std::string output_dir = "critspec_out";
  int probe_size = 100;
  double fim_tol = 1e-6;
  bool drift = false;
  bool save_networks = false;
  int threads = 0;  ///< 0 means one worker per seed

  std::vector<int> hidden_widths() const;
  OptimizerConfig optimizer(TrainingMode mode) const;
  /// Throws ConfigError on any violated invariant.
  void validate() const;
};

/// Unknown keys anywhere in the document are rejected with ConfigError.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::string& path);
nlohmann::json to_json(const ExperimentConfig& config);

}  // namespace critspec

#pragma once

#include <string>
#include <vector>

#include "critspec/harness/config.hpp"
#include "critspec/network.hpp"

namespace critspec {

/// Samples are columns of features.
struct Dataset {
  Matrix features;
  std::vector<int> labels;
  int classes = 0;

  Eigen::Index size() const { return features.cols(); }
  Eigen::Index dim() const { return features.rows(); }
  Dataset subset(const std::vector<Eigen::Index>& indices) const;
};

struct DatasetSplit {
  Dataset train;
  Dataset test;
};

/// Header row, numeric feature columns, integer label in the last column.
Dataset read_csv(const std::string& path);

/// CIFAR-10 binary records: one label byte then 3072 pixel bytes scaled to [0, 1].
Dataset read_cifar_file(const std::string& path);

DatasetSplit make_synthetic(const DatasetSpec& spec);

/// Deterministic load. File-backed kinds without a test path keep the
/// trailing fifth of the train file as the test split. A cifar directory
/// reads data_batch_*.bin and test_batch.bin.
DatasetSplit load_dataset(const DatasetSpec& spec);

double mean_sample_norm(const Matrix& features);

/// Multiplies both splits by target_norm / mean_sample_norm(train).
void rescale_globally(DatasetSplit& split, double target_norm);

/// One-hot values for the Gaussian head, labels for softmax.
Targets make_targets(const Dataset& data, HeadKind head);

}  // namespace critspec

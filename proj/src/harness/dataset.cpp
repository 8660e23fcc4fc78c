#include "critspec/harness/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "critspec/errors.hpp"
#include "critspec/numerics/rng.hpp"

namespace critspec {

namespace {

constexpr int kCifarClasses = 10;
constexpr std::size_t kCifarPixels = 3072;
constexpr std::size_t kCifarRecord = kCifarPixels + 1;

int infer_classes(const std::vector<int>& labels) {
  int top = -1;
  for (int l : labels) {
    if (l < 0) throw ConfigError("dataset: negative label");
    top = std::max(top, l);
  }
  return top + 1;
}

Dataset concat(const std::vector<Dataset>& parts) {
  Dataset out;
  Eigen::Index total = 0;
  for (const auto& p : parts) total += p.size();
  if (parts.empty()) return out;
  out.features.resize(parts.front().dim(), total);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    if (p.dim() != parts.front().dim()) throw ConfigError("dataset: inconsistent feature dimension across files");
    out.features.middleCols(at, p.size()) = p.features;
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    out.classes = std::max(out.classes, p.classes);
    at += p.size();
  }
  return out;
}

DatasetSplit holdout(const Dataset& all) {
  const Eigen::Index n = all.size();
  const Eigen::Index n_test = n / 5;
  if (n_test < 1) throw ConfigError("dataset: too few samples to hold out a test split");
  std::vector<Eigen::Index> train_idx(n - n_test), test_idx(n_test);
  for (Eigen::Index i = 0; i < n - n_test; ++i) train_idx[i] = i;
  for (Eigen::Index i = 0; i < n_test; ++i) test_idx[i] = n - n_test + i;
  return {all.subset(train_idx), all.subset(test_idx)};
}

Dataset read_any(DatasetKind kind, const std::string& path) {
  return kind == DatasetKind::csv ? read_csv(path) : read_cifar_file(path);
}

}  // namespace

Dataset Dataset::subset(const std::vector<Eigen::Index>& indices) const {
  Dataset out;
  out.classes = classes;
  out.features.resize(dim(), static_cast<Eigen::Index>(indices.size()));
  out.labels.reserve(indices.size());
  for (std::size_t j = 0; j < indices.size(); ++j) {
    out.features.col(static_cast<Eigen::Index>(j)) = features.col(indices[j]);
    out.labels.push_back(labels[indices[j]]);
  }
  return out;
}

Dataset read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open csv '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("csv '" + path + "' is empty");
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::size_t width = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> fields;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        fields.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw ConfigError("csv '" + path + "' line " + std::to_string(line_no) + ": bad number '" + cell + "'");
      }
    }
    if (fields.size() < 2) throw ConfigError("csv '" + path + "' line " + std::to_string(line_no) + ": need features and a label");
    if (width == 0) width = fields.size();
    if (fields.size() != width)
      throw ConfigError("csv '" + path + "' line " + std::to_string(line_no) + ": inconsistent column count");
    const double label = fields.back();
    if (label != std::floor(label)) throw ConfigError("csv '" + path + "': non-integer label");
    labels.push_back(static_cast<int>(label));
    fields.pop_back();
    rows.push_back(std::move(fields));
  }
  Dataset d;
  d.features.resize(static_cast<Eigen::Index>(width - 1), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t j = 0; j < rows.size(); ++j)
    for (std::size_t i = 0; i + 1 < width; ++i) d.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[j][i];
  d.labels = std::move(labels);
  d.classes = infer_classes(d.labels);
  return d;
}

Dataset read_cifar_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open cifar file '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty() || bytes.size() % kCifarRecord != 0)
    throw ConfigError("cifar file '" + path + "': size is not a multiple of the 3073-byte record");
  const std::size_t n = bytes.size() / kCifarRecord;
  Dataset d;
  d.classes = kCifarClasses;
  d.features.resize(static_cast<Eigen::Index>(kCifarPixels), static_cast<Eigen::Index>(n));
  d.labels.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const unsigned char* rec = bytes.data() + r * kCifarRecord;
    if (rec[0] >= kCifarClasses) throw ConfigError("cifar file '" + path + "': label out of range");
    d.labels[r] = rec[0];
    for (std::size_t p = 0; p < kCifarPixels; ++p)
      d.features(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(r)) = rec[p + 1] / 255.0;
  }
  return d;
}

DatasetSplit make_synthetic(const DatasetSpec& spec) {
  const RngStream base{spec.seed, 0};
  Rng mean_rng(base.substream(0));
  Matrix means(spec.dim, spec.classes);
  for (int k = 0; k < spec.classes; ++k) {
    Vector m = mean_rng.normal_vector(spec.dim);
    means.col(k) = m.normalized() * (3.0 * spec.spread);
  }
  auto draw = [&](int per_class, std::uint64_t stream) {
    Rng rng(base.substream(stream));
    Dataset d;
    d.classes = spec.classes;
    const Eigen::Index n = static_cast<Eigen::Index>(per_class) * spec.classes;
    d.features.resize(spec.dim, n);
    d.labels.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      const int k = static_cast<int>(i % spec.classes);
      d.labels[static_cast<std::size_t>(i)] = k;
      d.features.col(i) = means.col(k) + spec.spread * rng.normal_vector(spec.dim);
    }
    return d;
  };
  return {draw(spec.train_per_class, 1), draw(spec.test_per_class, 2)};
}

DatasetSplit load_dataset(const DatasetSpec& spec) {
  if (spec.kind == DatasetKind::synthetic) return make_synthetic(spec);
  namespace fs = std::filesystem;
  DatasetSplit split;
  if (spec.kind == DatasetKind::cifar && fs::is_directory(spec.train_path)) {
    std::vector<Dataset> parts;
    for (int b = 1; b <= 5; ++b) {
      const fs::path f = fs::path(spec.train_path) / ("data_batch_" + std::to_string(b) + ".bin");
      if (fs::exists(f)) parts.push_back(read_cifar_file(f.string()));
    }
    if (parts.empty()) throw ConfigError("cifar directory '" + spec.train_path + "' has no data_batch_*.bin");
    split.train = concat(parts);
    const fs::path t = fs::path(spec.train_path) / "test_batch.bin";
    if (!spec.test_path.empty())
      split.test = read_cifar_file(spec.test_path);
    else if (fs::exists(t))
      split.test = read_cifar_file(t.string());
    else
      split = holdout(split.train);
  } else if (spec.test_path.empty()) {
    split = holdout(read_any(spec.kind, spec.train_path));
  } else {
    split.train = read_any(spec.kind, spec.train_path);
    split.test = read_any(spec.kind, spec.test_path);
  }
  if (split.train.dim() != split.test.dim()) throw ConfigError("dataset: train and test dimensions differ");
  const int classes = std::max(split.train.classes, split.test.classes);
  split.train.classes = classes;
  split.test.classes = classes;
  return split;
}

double mean_sample_norm(const Matrix& features) {
  if (features.cols() == 0) throw ShapeError("mean_sample_norm: empty dataset");
  return features.colwise().norm().mean();
}

void rescale_globally(DatasetSplit& split, double target_norm) {
  const double current = mean_sample_norm(split.train.features);
  if (!(current > 0.0)) throw NumericalError("rescale_globally: train inputs have zero mean norm");
  const double factor = target_norm / current;
  split.train.features *= factor;
  split.test.features *= factor;
}

Targets make_targets(const Dataset& data, HeadKind head) {
  Targets t;
  t.labels = data.labels;
  if (head == HeadKind::gaussian_identity) {
    t.values = Matrix::Zero(data.classes, data.size());
    for (Eigen::Index i = 0; i < data.size(); ++i) t.values(data.labels[static_cast<std::size_t>(i)], i) = 1.0;
  }
  return t;
}

}  // namespace critspec

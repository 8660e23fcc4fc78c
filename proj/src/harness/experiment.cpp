#include "critspec/harness/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <thread>

#include "critspec/errors.hpp"
#include "critspec/harness/summary.hpp"
#include "critspec/network_io.hpp"
#include "critspec/numerics/rng.hpp"

namespace critspec {

namespace {

// substream ids under RngStream{seed, 0}
constexpr std::uint64_t kWeightStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kProbeStream = 3;
constexpr std::uint64_t kPowerStream = 4;

void fisher_yates(std::vector<Eigen::Index>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
}

bool all_finite(const NetworkState& net) {
  for (const auto& w : net.weights)
    if (!w.allFinite()) return false;
  for (const auto& b : net.biases)
    if (!b.allFinite()) return false;
  return true;
}

}  // namespace

MeanFieldSolution critical_solution(const ExperimentConfig& config) {
  return solve_critical(config.q_star, config.activation);
}

double input_norm_target(const ExperimentConfig& config, const MeanFieldSolution& sol, int input_dim) {
  const int n = config.init == WeightInit::gaussian ? input_dim : config.hidden_widths().front();
  return std::sqrt(input_norm_squared_target(sol, n));
}

NetworkState build_network(const ExperimentConfig& config, const MeanFieldSolution& sol, int input_dim,
                           int output_dim, std::uint64_t seed) {
  std::vector<int> widths{input_dim};
  for (int w : config.hidden_widths()) widths.push_back(w);
  widths.push_back(output_dim);
  NetworkState net = NetworkState::zeros(widths, config.activation, config.head);
  Rng rng(RngStream{seed, 0}.substream(kWeightStream));
  const int depth = net.depth();
  for (int l = 1; l <= depth; ++l) {
    net.weights[l - 1] = sample_weights(widths[l], widths[l - 1], config.init, sol.sigma_w, rng);
    for (Eigen::Index i = 0; i < net.biases[l - 1].size(); ++i) net.biases[l - 1][i] = sol.sigma_b * rng.normal();
  }
  const int n_out = widths[depth + 1];
  const int n_in = widths[depth];
  if (config.init == WeightInit::orthogonal && n_out < n_in)
    net.weights[depth] = sample_weights(n_in, n_out, config.init, sol.sigma_w, rng).transpose();
  else
    net.weights[depth] = sample_weights(n_out, n_in, config.init, sol.sigma_w, rng);
  net.validate();
  return net;
}

JacobianStats probe_jacobian_stats(const NetworkState& net, const Matrix& probe) {
  const ForwardTrace trace = forward(net, probe);
  JacobianStats out;
  const Eigen::Index batch = trace.batch_size();
  if (batch == 0) throw ShapeError("probe_jacobian_stats: empty probe");
  for (Eigen::Index i = 0; i < batch; ++i) {
    const SpectralSummary s = spectral_summary(output_input_jacobian(trace, net, i));
    out.sigma_max += s.sigma_max;
    out.sigma_min += s.sigma_min;
    out.mean_sq_sv += s.mean_square_sv;
  }
  const double n = static_cast<double>(batch);
  out.sigma_max /= n;
  out.sigma_min /= n;
  out.mean_sq_sv /= n;
  return out;
}

double accuracy(const NetworkState& net, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  const ForwardTrace trace = forward(net, data.features);
  Eigen::Index correct = 0;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    Eigen::Index arg = 0;
    trace.output().col(i).maxCoeff(&arg);
    if (arg == data.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

DatasetSplit prepare_dataset(const ExperimentConfig& config, const MeanFieldSolution& sol) {
  DatasetSplit data = load_dataset(config.dataset);
  if (data.train.size() == 0 || data.test.size() == 0) throw ConfigError("dataset has an empty split");
  if (config.probe_size > data.test.size())
    throw ConfigError("probe_size exceeds the test split (" + std::to_string(data.test.size()) + ")");
  rescale_globally(data, input_norm_target(config, sol, static_cast<int>(data.train.dim())));
  return data;
}

RunRecord run_single(const ExperimentConfig& config, TrainingMode mode, std::uint64_t seed, const DatasetSplit& data,
                     const MeanFieldSolution& sol) {
  RunRecord rec;
  rec.mode = mode;
  rec.seed = seed;
  const RngStream base{seed, 0};

  const NetworkState net0 = build_network(config, sol, static_cast<int>(data.train.dim()), data.train.classes, seed);

  std::vector<Eigen::Index> probe_idx(static_cast<std::size_t>(data.test.size()));
  for (std::size_t i = 0; i < probe_idx.size(); ++i) probe_idx[i] = static_cast<Eigen::Index>(i);
  Rng probe_rng(base.substream(kProbeStream));
  fisher_yates(probe_idx, probe_rng);
  probe_idx.resize(static_cast<std::size_t>(config.probe_size));
  std::sort(probe_idx.begin(), probe_idx.end());
  const Matrix probe = data.test.subset(probe_idx).features;

  const Targets train_targets = make_targets(data.train, config.head);
  PowerIterationOptions power;
  power.tol = config.fim_tol;

  auto lambda_max = [&](const NetworkState& net, int epoch) {
    const RngStream stream = base.substream(kPowerStream).substream(static_cast<std::uint64_t>(epoch));
    try {
      return fim_lambda_max(net, probe, power, stream);
    } catch (const ConvergenceError& e) {
      return e.best_estimate();
    }
  };

  auto record = [&](const NetworkState& net, int epoch, double penalty, const std::vector<double>& scales) {
    MetricRow row;
    row.epoch = epoch;
    row.train_loss = loss(net, data.train.features, train_targets);
    row.test_accuracy = accuracy(net, data.test);
    row.lambda_max_fim = lambda_max(net, epoch);
    const JacobianStats js = probe_jacobian_stats(net, probe);
    row.sigma_max_j = js.sigma_max;
    row.sigma_min_j = js.sigma_min;
    row.mean_sq_sv_j = js.mean_sq_sv;
    row.penalty = penalty;
    row.scale_mean = 0.0;
    row.scale_min = std::numeric_limits<double>::infinity();
    row.scale_max = -std::numeric_limits<double>::infinity();
    for (double s : scales) {
      row.scale_mean += s;
      row.scale_min = std::min(row.scale_min, s);
      row.scale_max = std::max(row.scale_max, s);
    }
    row.scale_mean /= static_cast<double>(scales.size());
    rec.rows.push_back(row);

    FimSnapshot snap;
    snap.epoch = epoch;
    snap.lambda_max = row.lambda_max_fim;
    snap.lambda_min = std::numeric_limits<double>::quiet_NaN();
    if (config.drift && epoch > 0)
      snap.drift_norm = fim_difference_norm(net, net0, probe, power, base.substream(kPowerStream + 100).substream(epoch));
    rec.snapshots.push_back(snap);
    return std::isfinite(row.train_loss) && std::isfinite(row.lambda_max_fim) && std::isfinite(row.sigma_max_j);
  };

  // network metrics at epoch 0 come from net0, so they do not depend on the mode
  Trainer trainer(net0, config.optimizer(mode), sol.sigma_w);
  rec.bound_inputs = measure_bound_inputs(net0, probe);
  rec.theorem = theorem_bound(rec.bound_inputs, net0.depth());
  rec.gershgorin_bound = std::numeric_limits<double>::quiet_NaN();
  if (net0.hidden_parameter_count() <= kDenseEigenLimit)
    rec.gershgorin_bound = block_gershgorin(empirical_fim_dense(net0, probe),
                                            BlockPartition::from_layout(HiddenParameterLayout(net0)))
                               .bound;
  if (!record(net0, 0, trainer.penalty_value(), trainer.scales())) {
    rec.aborted = true;
    rec.abort_reason = "non-finite metric at initialization";
    return rec;
  }

  Rng shuffle_rng(base.substream(kShuffleStream));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(data.train.size()));
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(i);
    fisher_yates(order, shuffle_rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const std::vector<Eigen::Index> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(stop));
      const Dataset batch = data.train.subset(idx);
      const double l = trainer.step(batch.features, make_targets(batch, config.head));
      if (!std::isfinite(l) || !all_finite(trainer.network())) {
        rec.aborted = true;
        rec.abort_reason = "non-finite loss or parameters at epoch " + std::to_string(epoch);
        return rec;
      }
    }
    if (epoch % config.stats_every == 0 || epoch == config.epochs) {
      if (!record(trainer.network(), epoch, trainer.penalty_value(), trainer.scales())) {
        rec.aborted = true;
        rec.abort_reason = "non-finite metric at epoch " + std::to_string(epoch);
        return rec;
      }
    }
  }
  if (config.save_networks) {
    std::filesystem::create_directories(config.output_dir);
    const auto path = std::filesystem::path(config.output_dir) /
                      ("net_" + to_string(mode) + "_seed" + std::to_string(seed) + ".crsp");
    save_network(path.string(), trainer.network());
  }
  return rec;
}

ExperimentResult run_experiment(const ExperimentConfig& config, bool write) {
  config.validate();
  const MeanFieldSolution sol = critical_solution(config);
  const DatasetSplit data = prepare_dataset(config, sol);

  struct Job {
    TrainingMode mode;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (TrainingMode m : config.modes)
    for (std::uint64_t s : config.seeds) jobs.push_back({m, s});

  ExperimentResult result;
  result.runs.resize(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      try {
        result.runs[j] = run_single(config, jobs[j].mode, jobs[j].seed, data, sol);
      } catch (...) {
        errors[j] = std::current_exception();
      }
    }
  };
  std::size_t workers = config.threads > 0 ? static_cast<std::size_t>(config.threads) : config.seeds.size();
  workers = std::max<std::size_t>(1, std::min(workers, jobs.size()));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  result.summary = summarize(result.runs, config);
  if (write) {
    namespace fs = std::filesystem;
    fs::create_directories(config.output_dir);
    for (const RunRecord& r : result.runs) {
      std::ofstream out(fs::path(config.output_dir) /
                        ("run_" + to_string(r.mode) + "_seed" + std::to_string(r.seed) + ".csv"));
      out << to_csv(r);
      if (!out) throw ConfigError("cannot write run CSV into '" + config.output_dir + "'");
    }
    write_curves_csv(result.runs, (fs::path(config.output_dir) / "curves.csv").string());
    std::ofstream out(fs::path(config.output_dir) / "summary.json");
    out << result.summary.dump(2) << "\n";
    if (!out) throw ConfigError("cannot write summary.json into '" + config.output_dir + "'");
  }
  return result;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_header() {
  return "epoch,train_loss,test_accuracy,lambda_max_fim,sigma_max_j,sigma_min_j,mean_sq_sv_j,penalty,scale_mean,"
         "scale_min,scale_max";
}

std::string to_csv(const RunRecord& record) {
  std::string out = csv_header() + "\n";
  for (const MetricRow& r : record.rows) {
    out += std::to_string(r.epoch);
    for (double v : {r.train_loss, r.test_accuracy, r.lambda_max_fim, r.sigma_max_j, r.sigma_min_j, r.mean_sq_sv_j,
                     r.penalty, r.scale_mean, r.scale_min, r.scale_max})
      out += "," + format_double(v);
    out += "\n";
  }
  return out;
}

}  // namespace critspec

#include <cmath>
#include <exception>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "critspec/errors.hpp"
#include "critspec/fisher.hpp"
#include "critspec/harness/config.hpp"
#include "critspec/harness/dataset.hpp"
#include "critspec/harness/experiment.hpp"
#include "critspec/meanfield.hpp"
#include "critspec/network_io.hpp"
#include "critspec/ntk.hpp"

using namespace critspec;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("bad number '" + item + "' in list");
    }
  }
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

DatasetSpec parse_data_arg(const std::string& arg) {
  DatasetSpec spec;
  if (!arg.empty() && arg.front() == '{') {
    json doc;
    try {
      doc = json::parse(arg);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("--data is not valid JSON: ") + e.what());
    }
    return parse_config(json{{"dataset", doc}}).dataset;
  }
  const bool csv = arg.size() >= 4 && arg.compare(arg.size() - 4, 4, ".csv") == 0;
  spec.kind = csv ? DatasetKind::csv : DatasetKind::cifar;
  spec.train_path = arg;
  return spec;
}

int cmd_critinit(double q_star, const std::string& activation) {
  const MeanFieldSolution sol = solve_critical(q_star, parse_activation(activation));
  const CriticalResiduals r = critical_residuals(sol, parse_activation(activation));
  json out = {{"activation", activation},
              {"q_star", sol.q_star},
              {"sigma_w", sol.sigma_w},
              {"sigma_b", sol.sigma_b},
              {"sigma_w2", sol.sigma_w * sol.sigma_w},
              {"sigma_b2", sol.sigma_b * sol.sigma_b},
              {"chi", sol.chi},
              {"critical", sol.critical},
              {"residual_fixed_point", r.fixed_point},
              {"residual_chi", r.chi}};
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_spectra(const std::string& net_path, const std::string& data_arg, int probe, double tol, std::uint64_t seed,
                double q_star) {
  const NetworkState net = load_network(net_path);
  const DatasetSplit data = load_dataset(parse_data_arg(data_arg));
  const Dataset& pool = data.train;
  if (pool.dim() != net.input_dim()) throw ConfigError("data dimension does not match the network input");
  const Eigen::Index n = std::min<Eigen::Index>(probe, pool.size());
  if (n < 2) throw ConfigError("need at least two probe samples");
  const Matrix x = pool.features.leftCols(n);

  PowerIterationOptions opts;
  opts.tol = tol;
  const JacobianStats js = probe_jacobian_stats(net, x);
  const double lam = fim_lambda_max(net, x, opts, RngStream{seed, 0});
  const SigmaMaxBoundInputs in = measure_bound_inputs(net, x);
  const TheoremBound tb = theorem_bound(in, net.depth());

  json chi_per_layer = json::array();
  const ForwardTrace trace = forward(net, x);
  for (int l = 1; l <= net.depth(); ++l) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      acc += (trace.derivatives[l - 1].col(i).asDiagonal() * net.weight(l)).squaredNorm() / net.weight(l).rows();
    chi_per_layer.push_back(acc / static_cast<double>(n));
  }

  json out = {{"samples", n},
              {"parameters", net.hidden_parameter_count()},
              {"lambda_max_fim", lam},
              {"jacobian", {{"sigma_max", js.sigma_max}, {"sigma_min", js.sigma_min}, {"mean_sq_sv", js.mean_sq_sv}}},
              {"chi_per_layer", chi_per_layer},
              {"theorem_bound", {{"branch", to_string(tb.branch)}, {"bound", tb.bound}, {"slack_ratio", tb.bound / lam}}},
              {"bound_inputs",
               {{"abs_mean_phi", in.abs_mean_phi},
                {"mean_x0_norm", in.mean_x0_norm},
                {"cov_x0_sigma_max", in.cov_x0_sigma_max},
                {"smax_Hg", in.smax_Hg},
                {"smax_J_to_layer", in.smax_J_to_layer}}}};
  if (q_star > 0.0) {
    // |E phi| from quadrature under q*, the other factors as measured
    const MeanFieldSolution sol = solve_critical(q_star, net.activation);
    SigmaMaxBoundInputs mf = in;
    mf.abs_mean_phi = std::abs(mean_activation(sol, net.activation));
    const TheoremBound tmf = theorem_bound(mf, net.depth());
    out["mean_field"] = {{"q_star", q_star},
                         {"abs_mean_phi", mf.abs_mean_phi},
                         {"theorem_bound", {{"branch", to_string(tmf.branch)}, {"bound", tmf.bound}}}};
  }
  if (net.hidden_parameter_count() <= kDenseEigenLimit) {
    const Matrix g = empirical_fim_dense(net, x);
    const GershgorinReport rep = block_gershgorin(g, BlockPartition::from_layout(HiddenParameterLayout(net)));
    out["dense"] = {{"lambda_max", dense_max_eig(g)},
                    {"lambda_min", fim_lambda_min_dense(g)},
                    {"gershgorin_bound", rep.bound},
                    {"disk_centers", rep.disk_centers},
                    {"disk_radii", rep.disk_radii}};
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_train(const std::string& config_path) {
  const ExperimentConfig config = load_config(config_path);
  const ExperimentResult result = run_experiment(config, true);
  int aborted = 0;
  for (const auto& r : result.runs) aborted += r.aborted ? 1 : 0;
  std::cout << json{{"output_dir", config.output_dir}, {"runs", result.runs.size()}, {"aborted", aborted}}.dump()
            << "\n";
  return aborted > 0 ? kExitNumerical : 0;
}

int cmd_hg_mc(int classes, const std::string& grid, int samples, std::uint64_t seed) {
  const std::vector<double> q = parse_list(grid);
  const HgMonteCarloReport rep = hg_lambda_mc(q, classes, samples, RngStream{seed, 0});
  json rows = json::array();
  for (const auto& d : rep.per_q)
    rows.push_back({{"q", d.q},
                    {"mean", d.mean},
                    {"min", d.min},
                    {"p05", d.p05},
                    {"median", d.median},
                    {"p95", d.p95},
                    {"max", d.max}});
  std::cout << json{{"classes", classes}, {"samples", samples}, {"per_q", rows}, {"non_monotone", rep.non_monotone}}
                   .dump(2)
            << "\n";
  return 0;
}

int cmd_ntk_check(const std::string& config_path, int samples) {
  const ExperimentConfig config = load_config(config_path);
  if (config.head != HeadKind::gaussian_identity)
    throw ConfigError("ntk-check needs head = gaussian_identity");
  const MeanFieldSolution sol = critical_solution(config);
  DatasetSplit data = prepare_dataset(config, sol);
  if (samples < 1 || samples > data.train.size()) throw ConfigError("--samples out of range");
  const NetworkState net =
      build_network(config, sol, static_cast<int>(data.train.dim()), data.train.classes, config.seeds.front());
  const SpectrumMatch m = spectrum_match(net, data.train.features.leftCols(samples));
  std::cout << json{{"discrepancy", m.discrepancy}, {"fim_spectrum", m.fim_spectrum}, {"ntk_spectrum", m.ntk_spectrum}}
                   .dump(2)
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"critical initialization, Jacobian / Fisher / NTK spectra and manifold training"};
  app.require_subcommand(1);

  double q_star = 1.0 / 64.0;
  std::string activation = "tanh";
  auto* critinit = app.add_subcommand("critinit", "solve for critical (sigma_w, sigma_b) at a target q*");
  critinit->add_option("--q-star", q_star, "target fixed-point variance")->required();
  critinit->add_option("--activation", activation, "tanh | identity");

  std::string net_path, data_arg;
  int probe = 100;
  double tol = 1e-8;
  std::uint64_t seed = 0;
  auto* spectra = app.add_subcommand("spectra", "spectral report for a saved network on a data sample");
  spectra->add_option("--net", net_path, "CRSP network file")->required();
  spectra->add_option("--data", data_arg, "csv path, cifar binary path or inline JSON dataset spec")->required();
  spectra->add_option("--probe", probe, "number of samples");
  spectra->add_option("--tol", tol, "power iteration tolerance");
  spectra->add_option("--seed", seed, "power iteration seed");
  double spectra_q = 0.0;
  spectra->add_option("--q-star", spectra_q, "also report mean-field |E phi| and bound at this q*")
      ->check(CLI::PositiveNumber);

  std::string config_path;
  auto* train = app.add_subcommand("train", "run the configured experiment");
  train->add_option("--config", config_path, "JSON config")->required();

  int classes = 10, samples = 10000;
  std::string grid;
  auto* hgmc = app.add_subcommand("hg-mc", "Monte Carlo of lambda_max of the softmax output Hessian");
  hgmc->add_option("--classes", classes, "number of classes K");
  hgmc->add_option("--q-grid", grid, "comma-separated q values")->required();
  hgmc->add_option("--samples", samples, "samples per q");
  hgmc->add_option("--seed", seed, "RNG seed");

  int ntk_samples = 4;
  auto* ntk = app.add_subcommand("ntk-check", "compare nonzero FIM and NTK spectra");
  ntk->add_option("--config", config_path, "JSON config")->required();
  ntk->add_option("--samples", ntk_samples, "dataset size |D|");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*critinit) return cmd_critinit(q_star, activation);
    if (*spectra) return cmd_spectra(net_path, data_arg, probe, tol, seed, spectra_q);
    if (*train) return cmd_train(config_path);
    if (*hgmc) return cmd_hg_mc(classes, grid, samples, seed);
    if (*ntk) return cmd_ntk_check(config_path, ntk_samples);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ShapeError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ConvergenceError& e) {
    std::cerr << "numerical failure: " << e.what() << " (best estimate " << e.best_estimate() << ")\n";
    return kExitNumerical;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return 0;
}

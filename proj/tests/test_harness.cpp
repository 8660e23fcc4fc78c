#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "critspec/errors.hpp"
#include "critspec/harness/config.hpp"
#include "critspec/harness/dataset.hpp"
#include "critspec/harness/experiment.hpp"
#include "critspec/harness/summary.hpp"
#include "critspec/numerics/stats.hpp"
#include "helpers.hpp"

using namespace critspec;
using nlohmann::json;

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("critspec_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ExperimentConfig tiny_config(const std::string& out) {
  json doc = {{"depth", 3},
              {"width", 16},
              {"q_star", 1.0 / 64.0},
              {"epochs", 2},
              {"batch_size", 10},
              {"stats_every", 1},
              {"seeds", {0, 1}},
              {"probe_size", 8},
              {"dataset",
               {{"kind", "synthetic"}, {"classes", 4}, {"dim", 16}, {"train_per_class", 10}, {"test_per_class", 5}}},
              {"output_dir", out}};
  return parse_config(doc);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace

TEST_CASE("config parsing") {
  const ExperimentConfig d = parse_config(json::object());
  CHECK(d.depth == 16);
  CHECK(d.hidden_widths() == std::vector<int>(16, 128));
  CHECK(d.euclidean.lr == 1e-3);
  CHECK(d.scale.lr == 1e-3);
  CHECK(d.manifold.lr == 1e-2);
  CHECK(d.stats_every == 5);
  CHECK(d.dataset.train_per_class * d.dataset.classes == 5000);
  CHECK(d.dataset.test_per_class * d.dataset.classes == 1000);

  const ExperimentConfig m =
      parse_config(json{{"mode", {"stiefel", "oblique"}}, {"lr", {{"manifold", 0.05}}}, {"beta1", 0.8}});
  CHECK(m.modes == std::vector<TrainingMode>{TrainingMode::stiefel, TrainingMode::oblique});
  CHECK(m.manifold.lr == 0.05);
  CHECK(m.scale.beta1 == 0.8);

  CHECK_THROWS_AS(parse_config(json{{"depht", 3}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"dataset", {{"kind", "synthetic"}, {"colour", 1}}}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"stats_every", 0}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"seeds", json::array()}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"q_star", 0.0}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"depth", "deep"}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"mode", "sphere"}}), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("synthetic dataset") {
  DatasetSpec spec;
  spec.classes = 2;
  spec.dim = 2;
  spec.train_per_class = 3;
  spec.test_per_class = 2;
  spec.spread = 0.0;
  const DatasetSplit s = make_synthetic(spec);
  CHECK(s.train.size() == 6);
  CHECK(s.test.size() == 4);
  CHECK(s.train.features.cwiseAbs().maxCoeff() == 0.0);

  spec.spread = 1.0;
  const DatasetSplit a = load_dataset(spec), b = load_dataset(spec);
  CHECK(a.train.features == b.train.features);
  CHECK(a.train.labels == std::vector<int>{0, 1, 0, 1, 0, 1});
}

TEST_CASE("csv dataset") {
  const fs::path dir = scratch("csv");
  const fs::path f = dir / "d.csv";
  std::ofstream(f) << "a,b,label\n1.5,2,1\n-3,4e-1,0\n0,0,2\n";
  const Dataset d = read_csv(f.string());
  CHECK(d.size() == 3);
  CHECK(d.dim() == 2);
  CHECK(d.labels == std::vector<int>{1, 0, 2});
  CHECK(d.features(1, 1) == 0.4);
  CHECK(d.classes == 3);

  std::ofstream(dir / "bad.csv") << "a,label\n1,2\n3\n";
  CHECK_THROWS_AS(read_csv((dir / "bad.csv").string()), ConfigError);
  std::ofstream(dir / "word.csv") << "a,label\n1,x\n";
  CHECK_THROWS_AS(read_csv((dir / "word.csv").string()), ConfigError);
  CHECK_THROWS_AS(read_csv((dir / "missing.csv").string()), ConfigError);
}

TEST_CASE("cifar binary dataset") {
  const fs::path dir = scratch("cifar");
  const fs::path f = dir / "data_batch_1.bin";
  {
    std::ofstream out(f, std::ios::binary);
    std::vector<char> rec(3073);
    for (int r = 0; r < 10000; ++r) {
      rec[0] = static_cast<char>(r % 10);
      for (int p = 0; p < 3072; ++p) rec[static_cast<std::size_t>(p + 1)] = static_cast<char>((r + p) % 256);
      out.write(rec.data(), static_cast<std::streamsize>(rec.size()));
    }
  }
  const Dataset d = read_cifar_file(f.string());
  CHECK(d.size() == 10000);
  CHECK(d.dim() == 3072);
  CHECK(*std::max_element(d.labels.begin(), d.labels.end()) == 9);
  CHECK(d.features.maxCoeff() == 1.0);
  CHECK(d.features.minCoeff() == 0.0);
  CHECK(d.features(3, 2) == doctest::Approx(5.0 / 255.0));

  DatasetSpec spec;
  spec.kind = DatasetKind::cifar;
  spec.train_path = dir.string();
  const DatasetSplit split = load_dataset(spec);
  CHECK(split.train.size() == 8000);
  CHECK(split.test.size() == 2000);

  std::ofstream(dir / "short.bin", std::ios::binary) << std::string(3000, 'a');
  CHECK_THROWS_AS(read_cifar_file((dir / "short.bin").string()), ConfigError);
  std::ofstream(dir / "label.bin", std::ios::binary) << std::string(1, char(12)) << std::string(3072, 'a');
  CHECK_THROWS_AS(read_cifar_file((dir / "label.bin").string()), ConfigError);
}

TEST_CASE("network construction") {
  ExperimentConfig c = tiny_config("unused");
  c.activation = Activation::identity;
  const MeanFieldSolution id = critical_solution(c);
  CHECK(id.sigma_w == 1.0);
  const NetworkState lin = build_network(c, id, 16, 4, 3);
  for (int l = 1; l <= 3; ++l)
    CHECK((lin.weight(l).transpose() * lin.weight(l) - Matrix::Identity(16, 16)).norm() < 1e-12);
  CHECK(lin.biases.back().norm() == 0.0);

  c.activation = Activation::tanh;
  const MeanFieldSolution sol = critical_solution(c);
  const NetworkState a = build_network(c, sol, 16, 4, 5), b = build_network(c, sol, 16, 4, 5);
  for (std::size_t l = 0; l < a.weights.size(); ++l) {
    CHECK(a.weights[l] == b.weights[l]);
    CHECK(a.biases[l] == b.biases[l]);
  }

  // pre-activation variance stays near q* through depth 32 at width 256
  c.depth = 32;
  c.width = 256;
  c.widths.clear();
  std::vector<double> var(32, 0.0);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const NetworkState net = build_network(c, sol, 256, 10, seed);
    Rng rng(RngStream{seed, 77});
    Matrix x = rng.normal_matrix(256, 20);
    x *= input_norm_target(c, sol, 256) / x.colwise().norm().mean();
    const ForwardTrace t = forward(net, x);
    for (int l = 0; l < 32; ++l) var[static_cast<std::size_t>(l)] += t.preactivations[static_cast<std::size_t>(l)].squaredNorm() / t.preactivations[static_cast<std::size_t>(l)].size() / 5.0;
  }
  for (double v : var) CHECK(std::abs(v - sol.q_star) < 0.1 * sol.q_star);
}

TEST_CASE("experiment runs, records and summaries") {
  const fs::path dir = scratch("exp");
  ExperimentConfig c = tiny_config((dir / "a").string());
  c.modes = {TrainingMode::euclidean, TrainingMode::stiefel, TrainingMode::oblique};
  const ExperimentResult r = run_experiment(c, true);
  REQUIRE(r.runs.size() == 6);
  for (const auto& run : r.runs) {
    CHECK_FALSE(run.aborted);
    REQUIRE(run.rows.size() == 3);
    for (std::size_t i = 1; i < run.rows.size(); ++i) CHECK(run.rows[i].epoch > run.rows[i - 1].epoch);
  }
  // epoch-0 network metrics do not depend on the optimizer mode
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t m = 1; m < 3; ++m) {
      const MetricRow& a = r.runs[s].rows[0];
      const MetricRow& b = r.runs[m * 2 + s].rows[0];
      CHECK(a.train_loss == b.train_loss);
      CHECK(a.test_accuracy == b.test_accuracy);
      CHECK(a.lambda_max_fim == b.lambda_max_fim);
      CHECK(a.sigma_max_j == b.sigma_max_j);
      CHECK(a.mean_sq_sv_j == b.mean_sq_sv_j);
    }
  // manifold modes keep their constraint
  const RunRecord& st = r.runs[2];
  CHECK(st.mode == TrainingMode::stiefel);

  // CSV schema
  const std::string header = csv_header();
  const std::size_t cols = split(header).size();
  for (const auto& run : r.runs) {
    std::ifstream in(dir / "a" / ("run_" + to_string(run.mode) + "_seed" + std::to_string(run.seed) + ".csv"));
    std::string line;
    std::getline(in, line);
    CHECK(line == header);
    int rows = 0;
    while (std::getline(in, line)) {
      const auto cells = split(line);
      CHECK(cells.size() == cols);
      for (std::size_t k = 1; k < cells.size(); ++k) CHECK(std::isfinite(std::stod(cells[k])));
      ++rows;
    }
    CHECK(rows == 3);
  }

  // summary correlation matches a recomputation from the emitted CSVs
  std::vector<double> s2, lam;
  for (std::uint64_t seed : {0, 1}) {
    std::ifstream in(dir / "a" / ("run_euclidean_seed" + std::to_string(seed) + ".csv"));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      const auto cells = split(line);
      s2.push_back(std::stod(cells[4]) * std::stod(cells[4]));
      lam.push_back(std::stod(cells[3]));
    }
  }
  const double rho = r.summary["modes"]["euclidean"]["pearson_sigma2_lambda_all_rows"].get<double>();
  CHECK(rho == doctest::Approx(pearson(s2, lam)).epsilon(1e-12));
  CHECK(fs::exists(dir / "a" / "summary.json"));
  CHECK(fs::exists(dir / "a" / "curves.csv"));

  // determinism: a second run writes identical bytes
  ExperimentConfig again = c;
  again.output_dir = (dir / "b").string();
  again.threads = 1;
  run_experiment(again, true);
  for (const auto& entry : fs::directory_iterator(dir / "a")) {
    if (entry.path().extension() != ".csv") continue;
    std::ifstream x(entry.path()), y(dir / "b" / entry.path().filename());
    std::stringstream sx, sy;
    sx << x.rdbuf();
    sy << y.rdbuf();
    CHECK(sx.str() == sy.str());
  }
}

TEST_CASE("zero epochs and summary aggregation") {
  ExperimentConfig c = tiny_config("unused");
  c.epochs = 0;
  c.seeds = {4, 4};
  const ExperimentResult r = run_experiment(c, false);
  REQUIRE(r.runs.size() == 2);
  CHECK(r.runs[0].rows.size() == 1);
  CHECK(r.runs[0].rows[0].epoch == 0);
  const auto curve = mode_curves(r.runs, TrainingMode::euclidean);
  REQUIRE(curve.size() == 1);
  CHECK(curve[0].train_loss.stddev == 0.0);
  CHECK(curve[0].lambda_max_fim.stddev == 0.0);

  const std::vector<RunRecord> single{r.runs[0]};
  const auto one = mode_curves(single, TrainingMode::euclidean);
  CHECK(one[0].train_loss.mean == r.runs[0].rows[0].train_loss);
  CHECK(one[0].sigma_max_j.mean == r.runs[0].rows[0].sigma_max_j);

  c.probe_size = 1000;
  CHECK_THROWS_AS(run_experiment(c, false), ConfigError);
}

TEST_CASE("CSV number formatting") {
  CHECK(format_double(0.1) == "0.10000000000000001");
  CHECK(format_double(NAN) == "nan");
  CHECK(std::stod(format_double(1.0 / 3.0)) == 1.0 / 3.0);
}

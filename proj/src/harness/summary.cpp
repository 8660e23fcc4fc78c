#include "critspec/harness/summary.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include "critspec/errors.hpp"
#include "critspec/numerics/stats.hpp"

namespace critspec {

using nlohmann::json;

namespace {

MetricAggregate aggregate(const std::vector<double>& xs) {
  MetricAggregate a;
  a.count = static_cast<int>(xs.size());
  if (xs.empty()) {
    a.mean = std::numeric_limits<double>::quiet_NaN();
    return a;
  }
  a.mean = mean(xs);
  a.stddev = xs.size() > 1 ? stddev(xs) : 0.0;
  return a;
}

json to_json(const MetricAggregate& a) { return {{"mean", a.mean}, {"std", a.stddev}, {"n", a.count}}; }

std::vector<TrainingMode> modes_in(const std::vector<RunRecord>& runs) {
  std::vector<TrainingMode> out;
  for (const auto& r : runs)
    if (std::find(out.begin(), out.end(), r.mode) == out.end()) out.push_back(r.mode);
  return out;
}

}  // namespace

std::vector<CurvePoint> mode_curves(const std::vector<RunRecord>& runs, TrainingMode mode) {
  std::map<int, std::vector<const MetricRow*>> by_epoch;
  for (const auto& r : runs)
    if (r.mode == mode)
      for (const auto& row : r.rows) by_epoch[row.epoch].push_back(&row);
  std::vector<CurvePoint> out;
  for (const auto& [epoch, rows] : by_epoch) {
    auto collect = [&](double MetricRow::*field) {
      std::vector<double> xs;
      for (const MetricRow* row : rows) xs.push_back(row->*field);
      return aggregate(xs);
    };
    CurvePoint p;
    p.epoch = epoch;
    p.train_loss = collect(&MetricRow::train_loss);
    p.test_accuracy = collect(&MetricRow::test_accuracy);
    p.lambda_max_fim = collect(&MetricRow::lambda_max_fim);
    p.sigma_max_j = collect(&MetricRow::sigma_max_j);
    p.sigma_min_j = collect(&MetricRow::sigma_min_j);
    p.mean_sq_sv_j = collect(&MetricRow::mean_sq_sv_j);
    p.penalty = collect(&MetricRow::penalty);
    p.scale_mean = collect(&MetricRow::scale_mean);
    out.push_back(p);
  }
  return out;
}

double sigma_lambda_correlation(const std::vector<MetricRow>& rows) {
  if (rows.size() < 3) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> s2, lam;
  for (const auto& r : rows) {
    s2.push_back(r.sigma_max_j * r.sigma_max_j);
    lam.push_back(r.lambda_max_fim);
  }
  try {
    return pearson(s2, lam);
  } catch (const std::exception&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

json summarize(const std::vector<RunRecord>& runs, const ExperimentConfig& config) {
  if (runs.empty()) throw ShapeError("summarize: no runs");
  json out;
  out["config"] = to_json(config);

  json modes = json::object();
  for (TrainingMode m : modes_in(runs)) {
    json curve = json::array();
    for (const CurvePoint& p : mode_curves(runs, m))
      curve.push_back({{"epoch", p.epoch},
                       {"train_loss", to_json(p.train_loss)},
                       {"test_accuracy", to_json(p.test_accuracy)},
                       {"lambda_max_fim", to_json(p.lambda_max_fim)},
                       {"sigma_max_j", to_json(p.sigma_max_j)},
                       {"sigma_min_j", to_json(p.sigma_min_j)},
                       {"mean_sq_sv_j", to_json(p.mean_sq_sv_j)},
                       {"penalty", to_json(p.penalty)},
                       {"scale_mean", to_json(p.scale_mean)}});
    std::vector<MetricRow> all_rows;
    std::vector<double> final_loss;
    int aborted = 0;
    int count = 0;
    for (const auto& r : runs) {
      if (r.mode != m) continue;
      ++count;
      if (r.aborted) ++aborted;
      all_rows.insert(all_rows.end(), r.rows.begin(), r.rows.end());
      if (!r.aborted && !r.rows.empty()) final_loss.push_back(r.rows.back().train_loss);
    }
    modes[to_string(m)] = {{"runs", count},
                           {"aborted", aborted},
                           {"final_train_loss", to_json(aggregate(final_loss))},
                           {"pearson_sigma2_lambda_all_rows", sigma_lambda_correlation(all_rows)},
                           {"curve", curve}};
  }
  out["modes"] = modes;

  // epoch-0 rows are mode independent, so only the first mode contributes
  const TrainingMode first = runs.front().mode;
  std::vector<MetricRow> init_rows;
  json bounds = json::array();
  std::vector<double> lam0, bound0;
  for (const auto& r : runs) {
    if (r.mode != first || r.rows.empty()) continue;
    init_rows.push_back(r.rows.front());
    const double lam = r.rows.front().lambda_max_fim;
    lam0.push_back(lam);
    bound0.push_back(r.theorem.bound);
    bounds.push_back({{"seed", r.seed},
                      {"lambda_max_fim", lam},
                      {"theorem_bound", r.theorem.bound},
                      {"branch", to_string(r.theorem.branch)},
                      {"slack_ratio", r.theorem.bound / lam},
                      {"dense_gershgorin_bound", r.gershgorin_bound},
                      {"mean_x0_norm", r.bound_inputs.mean_x0_norm},
                      {"abs_mean_phi", r.bound_inputs.abs_mean_phi},
                      {"smax_Hg", r.bound_inputs.smax_Hg}});
  }
  const double lam_mean = lam0.empty() ? std::numeric_limits<double>::quiet_NaN() : mean(lam0);
  const double bound_mean = bound0.empty() ? std::numeric_limits<double>::quiet_NaN() : mean(bound0);
  out["initialization"] = {{"pearson_sigma2_lambda", sigma_lambda_correlation(init_rows)},
                           {"lambda_max_fim_mean", lam_mean},
                           {"theorem_bound_mean", bound_mean},
                           {"slack_ratio", bound_mean / lam_mean},
                           {"bound_holds", lam_mean <= bound_mean},
                           {"per_seed", bounds}};

  json drift = json::array();
  for (const auto& r : runs) {
    const DriftReport d = fim_drift(r.snapshots);
    drift.push_back({{"mode", to_string(r.mode)},
                     {"seed", r.seed},
                     {"lambda_max_ratio", d.lambda_max_ratio},
                     {"early_jump", d.early_jump},
                     {"max_drift", config.drift ? json(d.max_drift) : json(nullptr)},
                     {"aborted", r.aborted},
                     {"abort_reason", r.abort_reason}});
  }
  out["drift"] = drift;
  return out;
}

void write_curves_csv(const std::vector<RunRecord>& runs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << "mode,epoch";
  for (const char* name : {"train_loss", "test_accuracy", "lambda_max_fim", "sigma_max_j", "sigma_min_j",
                           "mean_sq_sv_j", "penalty", "scale_mean"})
    out << "," << name << "_mean," << name << "_std";
  out << "\n";
  for (TrainingMode m : modes_in(runs)) {
    for (const CurvePoint& p : mode_curves(runs, m)) {
      out << to_string(m) << "," << p.epoch;
      for (const MetricAggregate* a : {&p.train_loss, &p.test_accuracy, &p.lambda_max_fim, &p.sigma_max_j,
                                       &p.sigma_min_j, &p.mean_sq_sv_j, &p.penalty, &p.scale_mean})
        out << "," << format_double(a->mean) << "," << format_double(a->stddev);
      out << "\n";
    }
  }
}

}  // namespace critspec

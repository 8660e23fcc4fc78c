#include "critspec/harness/config.hpp"

#include <fstream>
#include <set>

#include "critspec/errors.hpp"

namespace critspec {

using nlohmann::json;

std::string to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::synthetic:
      return "synthetic";
    case DatasetKind::csv:
      return "csv";
    case DatasetKind::cifar:
      return "cifar";
  }
  return "synthetic";
}

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

template <class T>
void read(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

DatasetSpec parse_dataset(const json& obj) {
  reject_unknown(obj,
                 {"kind", "train", "test", "classes", "dim", "train_per_class", "test_per_class", "spread", "seed"},
                 "dataset");
  DatasetSpec d;
  std::string kind = "synthetic";
  read(obj, "kind", kind);
  if (kind == "synthetic")
    d.kind = DatasetKind::synthetic;
  else if (kind == "csv")
    d.kind = DatasetKind::csv;
  else if (kind == "cifar" || kind == "cifar-binary")
    d.kind = DatasetKind::cifar;
  else
    throw ConfigError("unknown dataset kind '" + kind + "'");
  read(obj, "train", d.train_path);
  read(obj, "test", d.test_path);
  read(obj, "classes", d.classes);
  read(obj, "dim", d.dim);
  read(obj, "train_per_class", d.train_per_class);
  read(obj, "test_per_class", d.test_per_class);
  read(obj, "spread", d.spread);
  read(obj, "seed", d.seed);
  return d;
}

json hyper_json(const AdamHyper& h) { return {{"lr", h.lr}, {"beta1", h.beta1}, {"beta2", h.beta2}, {"eps", h.eps}}; }

}  // namespace

std::vector<int> ExperimentConfig::hidden_widths() const {
  return widths.empty() ? std::vector<int>(static_cast<std::size_t>(std::max(depth, 0)), width) : widths;
}

OptimizerConfig ExperimentConfig::optimizer(TrainingMode mode) const {
  OptimizerConfig o;
  o.mode = mode;
  o.penalty = penalty;
  o.euclidean = euclidean;
  o.scale = scale;
  o.manifold = manifold;
  return o;
}

void ExperimentConfig::validate() const {
  if (depth < 1) throw ConfigError("depth must be >= 1");
  if (!widths.empty() && static_cast<int>(widths.size()) != depth)
    throw ConfigError("widths must list exactly depth entries");
  for (int w : hidden_widths())
    if (w < 1) throw ConfigError("widths must be positive");
  if (!(q_star > 0.0)) throw ConfigError("q_star must be positive");
  if (modes.empty()) throw ConfigError("mode list is empty");
  if (!(penalty >= 0.0)) throw ConfigError("penalty must be nonnegative");
  for (const AdamHyper* h : {&euclidean, &scale, &manifold}) {
    if (!(h->lr >= 0.0) || !(h->beta1 >= 0.0 && h->beta1 < 1.0) || !(h->beta2 >= 0.0 && h->beta2 < 1.0) ||
        !(h->eps > 0.0))
      throw ConfigError("optimizer hyperparameters out of range");
  }
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (stats_every < 1) throw ConfigError("stats_every must be >= 1");
  if (seeds.empty()) throw ConfigError("seeds must be nonempty");
  if (probe_size < 2) throw ConfigError("probe_size must be >= 2");
  if (!(fim_tol > 0.0)) throw ConfigError("fim_tol must be positive");
  if (threads < 0) throw ConfigError("threads must be >= 0");
  if (dataset.kind == DatasetKind::synthetic) {
    if (dataset.classes < 2 || dataset.dim < 1 || dataset.train_per_class < 1 || dataset.test_per_class < 1 ||
        !(dataset.spread >= 0.0))
      throw ConfigError("synthetic dataset parameters out of range");
  } else if (dataset.train_path.empty()) {
    throw ConfigError("file-backed dataset needs a 'train' path");
  }
}

static ExperimentConfig parse_config_unchecked(const json& doc) {
  reject_unknown(doc,
                 {"depth", "width", "widths", "activation", "head", "q_star", "init", "mode", "penalty", "lr", "beta1",
                  "beta2", "eps", "epochs", "batch_size", "stats_every", "seeds", "dataset", "output_dir",
                  "probe_size", "fim_tol", "drift", "save_networks", "threads"},
                 "config");
  ExperimentConfig c;
  read(doc, "depth", c.depth);
  read(doc, "width", c.width);
  read(doc, "widths", c.widths);
  if (doc.contains("activation")) c.activation = parse_activation(doc.at("activation").get<std::string>());
  if (doc.contains("head")) c.head = parse_head(doc.at("head").get<std::string>());
  read(doc, "q_star", c.q_star);
  if (doc.contains("init")) c.init = parse_weight_init(doc.at("init").get<std::string>());
  if (doc.contains("mode")) {
    const json& m = doc.at("mode");
    c.modes.clear();
    if (m.is_string()) {
      c.modes.push_back(parse_training_mode(m.get<std::string>()));
    } else if (m.is_array()) {
      for (const auto& e : m) c.modes.push_back(parse_training_mode(e.get<std::string>()));
    } else {
      throw ConfigError("mode must be a string or a list of strings");
    }
  }
  read(doc, "penalty", c.penalty);
  if (doc.contains("lr")) {
    const json& lr = doc.at("lr");
    reject_unknown(lr, {"euclidean", "scale", "manifold"}, "lr");
    read(lr, "euclidean", c.euclidean.lr);
    read(lr, "scale", c.scale.lr);
    read(lr, "manifold", c.manifold.lr);
  }
  for (AdamHyper* h : {&c.euclidean, &c.scale, &c.manifold}) {
    read(doc, "beta1", h->beta1);
    read(doc, "beta2", h->beta2);
    read(doc, "eps", h->eps);
  }
  read(doc, "epochs", c.epochs);
  read(doc, "batch_size", c.batch_size);
  read(doc, "stats_every", c.stats_every);
  read(doc, "seeds", c.seeds);
  if (doc.contains("dataset")) c.dataset = parse_dataset(doc.at("dataset"));
  read(doc, "output_dir", c.output_dir);
  read(doc, "probe_size", c.probe_size);
  read(doc, "fim_tol", c.fim_tol);
  read(doc, "drift", c.drift);
  read(doc, "save_networks", c.save_networks);
  read(doc, "threads", c.threads);
  c.validate();
  return c;
}

ExperimentConfig parse_config(const json& doc) {
  try {
    return parse_config_unchecked(doc);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(doc);
}

json to_json(const ExperimentConfig& c) {
  json modes = json::array();
  for (TrainingMode m : c.modes) modes.push_back(to_string(m));
  json dataset = {{"kind", to_string(c.dataset.kind)}};
  if (c.dataset.kind == DatasetKind::synthetic) {
    dataset.update({{"classes", c.dataset.classes},
                    {"dim", c.dataset.dim},
                    {"train_per_class", c.dataset.train_per_class},
                    {"test_per_class", c.dataset.test_per_class},
                    {"spread", c.dataset.spread},
                    {"seed", c.dataset.seed}});
  } else {
    dataset.update({{"train", c.dataset.train_path}, {"test", c.dataset.test_path}});
  }
  return {{"depth", c.depth},
          {"widths", c.hidden_widths()},
          {"activation", to_string(c.activation)},
          {"head", to_string(c.head)},
          {"q_star", c.q_star},
          {"init", to_string(c.init)},
          {"mode", modes},
          {"penalty", c.penalty},
          {"optimizer", {{"euclidean", hyper_json(c.euclidean)},
                         {"scale", hyper_json(c.scale)},
                         {"manifold", hyper_json(c.manifold)}}},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"stats_every", c.stats_every},
          {"seeds", c.seeds},
          {"dataset", dataset},
          {"probe_size", c.probe_size},
          {"fim_tol", c.fim_tol},
          {"drift", c.drift}};
}

}  // namespace critspec

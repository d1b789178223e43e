#ifndef SCDM_IO_HPP
#define SCDM_IO_HPP

// Run-configuration files, trained-model directories and evaluation reports.
//
// Model directory layout:
//   params.txt    write_params text
//   tree.txt      structured prefix form, one line
//   history.csv   one row per outer epoch
//   config.json   run configuration snapshot (threads excluded)
//   seed.txt      master seed
// Every file is a pure function of the model, so equal models give
// byte-identical directories.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scdm/autodiff.hpp"
#include "scdm/common.hpp"
#include "scdm/dataset.hpp"
#include "scdm/exprtree.hpp"
#include "scdm/metrics.hpp"
#include "scdm/trainer.hpp"

namespace scdm {

using json = nlohmann::ordered_json;

namespace detail {

/// Reads typed fields from a JSON object and rejects keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(label() + "expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError(label() + "bad value for '" + key + "'");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string sub(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + sub(it.key().c_str()) + "'");
    }
  }

 private:
  std::string label() const { return path_.empty() ? "config: " : "config '" + path_ + "': "; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline SelectionMode selection_from_string(const std::string& s) {
  if (s == "tournament") return SelectionMode::tournament;
  if (s == "truncation") return SelectionMode::truncation;
  throw ConfigError("unknown gp.selection_mode '" + s + "' (expected tournament or truncation)");
}

inline std::string to_string(SelectionMode m) { return m == SelectionMode::tournament ? "tournament" : "truncation"; }

}  // namespace detail

inline json to_json(const TrainConfig& c) {
  json j;
  j["outer_epochs"] = c.outer_epochs;
  j["variant"] = to_string(c.variant);
  j["seed"] = c.seed;
  j["disc_scale"] = c.disc_scale;
  j["po"] = {{"learning_rate", c.po.learning_rate},
             {"batch_size", c.po.batch_size},
             {"inner_epochs", c.po.inner_epochs}};
  j["gp"] = {{"population_size", c.gp.population_size},
             {"generations", c.gp.generations},
             {"crossover_rate", c.gp.crossover_rate},
             {"mutation_rate", c.gp.mutation_rate},
             {"init_depth", c.gp.init_depth},
             {"tournament_k", c.gp.tournament_k},
             {"selection_mode", detail::to_string(c.gp.selection_mode)},
             {"max_height", c.gp.max_height},
             {"variation_retries", c.gp.variation_retries},
             {"generation_retries", c.gp.generation_retries},
             {"insert_depth", c.gp.insert_depth},
             {"allow_broadcast", c.gp.allow_broadcast},
             {"complexity_tie_break", c.gp.complexity_tie_break},
             {"keep_incumbent", c.gp.keep_incumbent}};
  j["es"] = {{"learning_rate", c.es.learning_rate},
             {"population_size", c.es.population_size},
             {"generations", c.es.generations},
             {"mutation_rate", c.es.mutation_rate},
             {"tournament_k", c.es.tournament_k}};
  return j;
}

/// Missing keys keep their defaults; unknown keys raise ConfigError.
inline TrainConfig train_config_from_json(const json& j, const std::string& path = "train") {
  TrainConfig c;
  detail::ObjectReader r(j, path);
  r.get("outer_epochs", c.outer_epochs);
  std::string variant = to_string(c.variant);
  r.get("variant", variant);
  c.variant = variant_from_string(variant);
  r.get("seed", c.seed);
  r.get("disc_scale", c.disc_scale);
  if (const json* po = r.child("po")) {
    detail::ObjectReader p(*po, r.sub("po"));
    p.get("learning_rate", c.po.learning_rate);
    p.get("batch_size", c.po.batch_size);
    p.get("inner_epochs", c.po.inner_epochs);
    p.finish();
  }
  if (const json* gp = r.child("gp")) {
    detail::ObjectReader g(*gp, r.sub("gp"));
    g.get("population_size", c.gp.population_size);
    g.get("generations", c.gp.generations);
    g.get("crossover_rate", c.gp.crossover_rate);
    g.get("mutation_rate", c.gp.mutation_rate);
    g.get("init_depth", c.gp.init_depth);
    g.get("tournament_k", c.gp.tournament_k);
    std::string mode = detail::to_string(c.gp.selection_mode);
    g.get("selection_mode", mode);
    c.gp.selection_mode = detail::selection_from_string(mode);
    g.get("max_height", c.gp.max_height);
    g.get("variation_retries", c.gp.variation_retries);
    g.get("generation_retries", c.gp.generation_retries);
    g.get("insert_depth", c.gp.insert_depth);
    g.get("allow_broadcast", c.gp.allow_broadcast);
    g.get("complexity_tie_break", c.gp.complexity_tie_break);
    g.get("keep_incumbent", c.gp.keep_incumbent);
    g.finish();
  }
  if (const json* es = r.child("es")) {
    detail::ObjectReader e(*es, r.sub("es"));
    e.get("learning_rate", c.es.learning_rate);
    e.get("population_size", c.es.population_size);
    e.get("generations", c.es.generations);
    e.get("mutation_rate", c.es.mutation_rate);
    e.get("tournament_k", c.es.tournament_k);
    e.finish();
  }
  r.finish();
  c.check();
  return c;
}

struct DataConfig {
  std::string logs;
  std::string qmatrix;
  std::optional<std::size_t> n_students;
  double test_fraction = 0.2;
  std::uint64_t split_seed = 0;
  std::vector<std::string> attribute_labels;  // empty = "k0", "k1", ...
};

struct RunConfigFile {
  DataConfig data;
  std::string output = "model";
  TrainConfig train;
};

inline json to_json(const RunConfigFile& c) {
  json data;
  data["logs"] = c.data.logs;
  data["qmatrix"] = c.data.qmatrix;
  data["n_students"] = c.data.n_students ? json(*c.data.n_students) : json(nullptr);
  data["test_fraction"] = c.data.test_fraction;
  data["split_seed"] = c.data.split_seed;
  data["attribute_labels"] = c.data.attribute_labels;
  json j;
  j["data"] = std::move(data);
  j["output"] = c.output;
  j["train"] = to_json(c.train);
  return j;
}

inline RunConfigFile run_config_from_json(const json& j) {
  RunConfigFile c;
  detail::ObjectReader r(j, "");
  if (const json* d = r.child("data")) {
    detail::ObjectReader dr(*d, "data");
    dr.get("logs", c.data.logs);
    dr.get("qmatrix", c.data.qmatrix);
    if (const json* n = dr.child("n_students"); n && !n->is_null()) {
      if (!n->is_number_unsigned()) throw ConfigError("config 'data': bad value for 'n_students'");
      c.data.n_students = n->get<std::size_t>();
    }
    dr.get("test_fraction", c.data.test_fraction);
    dr.get("split_seed", c.data.split_seed);
    dr.get("attribute_labels", c.data.attribute_labels);
    dr.finish();
  }
  r.get("output", c.output);
  if (const json* t = r.child("train")) c.train = train_config_from_json(*t, "train");
  r.finish();
  if (!(c.data.test_fraction > 0.0 && c.data.test_fraction < 1.0)) {
    throw ConfigError("data.test_fraction must lie in (0, 1)");
  }
  return c;
}

inline RunConfigFile load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return run_config_from_json(j);
}

inline std::vector<std::string> attribute_labels(const DataConfig& data, std::size_t L) {
  if (!data.attribute_labels.empty()) {
    if (data.attribute_labels.size() != L) {
      throw ConfigError("data.attribute_labels has " + std::to_string(data.attribute_labels.size()) +
                        " entries but the Q-matrix has " + std::to_string(L) + " attributes");
    }
    return data.attribute_labels;
  }
  std::vector<std::string> out;
  for (std::size_t k = 0; k < L; ++k) out.push_back("k" + std::to_string(k));
  return out;
}

// ---------------------------------------------------------------------------
// Model directory

namespace detail {

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
  if (!out) throw DataError("failed writing " + p.string());
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace detail

inline std::string history_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream os;
  os << "epoch,po_loss,train_loss,train_accuracy,best_fitness,tree\n";
  for (const auto& r : history) {
    os << r.epoch << ',' << detail::num(r.po_loss) << ',' << detail::num(r.train_loss) << ','
       << detail::num(r.train_accuracy) << ',' << detail::num(r.best_fitness) << ",\"" << r.tree << "\"\n";
  }
  return os.str();
}

/// Writes the model directory. `run` supplies the data section of the
/// snapshot; the train section always comes from the model itself.
inline void save_model(const std::filesystem::path& dir, const TrainedModel& model, RunConfigFile run = {}) {
  std::filesystem::create_directories(dir);
  std::ostringstream params;
  write_params(params, model.params);
  detail::write_file(dir / "params.txt", params.str());
  detail::write_file(dir / "tree.txt", serialize(model.tree) + "\n");
  detail::write_file(dir / "history.csv", history_csv(model.history));
  run.train = model.config;
  detail::write_file(dir / "config.json", to_json(run).dump(2) + "\n");
  detail::write_file(dir / "seed.txt", std::to_string(model.seed) + "\n");
}

struct LoadedModel {
  TrainedModel model;
  RunConfigFile run;
};

inline LoadedModel load_model(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("model directory not found: " + dir.string());
  std::istringstream params_in(detail::read_file(dir / "params.txt"));
  ModelParams params = read_params(params_in);
  const std::string tree_text = detail::read_file(dir / "tree.txt");
  std::optional<ExprTree> tree;
  try {
    tree = parse(tree_text);
  } catch (const ParseError& e) {
    throw DataError((dir / "tree.txt").string() + ": " + e.what());
  }
  if (!is_valid(*tree)) throw DataError((dir / "tree.txt").string() + ": tree violates the constraints");
  RunConfigFile run;
  try {
    run = run_config_from_json(json::parse(detail::read_file(dir / "config.json")));
  } catch (const json::parse_error& e) {
    throw DataError((dir / "config.json").string() + ": " + e.what());
  }
  const std::string seed_text = detail::read_file(dir / "seed.txt");
  const auto seed = detail::parse_int<std::uint64_t>(detail::trim(seed_text.substr(0, seed_text.find('\n'))));
  if (!seed) throw DataError((dir / "seed.txt").string() + ": not an integer");
  TrainConfig cfg = run.train;
  return {TrainedModel{std::move(params), std::move(*tree), {}, cfg, *seed}, std::move(run)};
}

// ---------------------------------------------------------------------------
// Evaluation report

struct EvalReport {
  std::size_t n_logs = 0;
  std::size_t n_students = 0;
  double accuracy = 0.0;
  std::optional<double> auc;  // absent for single-class labels
  double f1 = 0.0;
  DoaResult doa;
  DoaOptions doa_options;
  std::string tree;
  std::string tree_infix;
  std::size_t outer_epochs = 0;
  std::string variant;
  std::uint64_t seed = 0;
};

inline EvalReport evaluate(const TrainedModel& model, const ResponseDataset& ds, DoaOptions doa_opts) {
  check_shapes(model.params, ds.qmatrix());
  if (model.params.n_students() != ds.n_students()) {
    throw DataError("model has " + std::to_string(model.params.n_students()) + " students, dataset has " +
                    std::to_string(ds.n_students()));
  }
  EvalReport r;
  r.n_logs = ds.size();
  r.n_students = ds.n_students();
  const auto probs = predict(model.tree, model.params, ds);
  const auto labels = ds.labels();
  r.accuracy = accuracy(probs, labels);
  try {
    r.auc = auc(probs, labels);
  } catch (const MetricError&) {
    r.auc.reset();
  }
  r.f1 = f1(probs, labels);
  r.doa = doa(model.params.effective_p(), ds, doa_opts);
  r.doa_options = doa_opts;
  r.tree = serialize(model.tree);
  r.tree_infix = to_infix(model.tree);
  r.outer_epochs = model.config.outer_epochs;
  r.variant = to_string(model.config.variant);
  r.seed = model.seed;
  return r;
}

inline json to_json(const EvalReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json per = json::array();
  for (const auto& v : r.doa.per_attribute) per.push_back(opt(v));
  json j;
  j["accuracy"] = r.accuracy;
  j["auc"] = opt(r.auc);
  if (!r.auc) j["auc_note"] = "unavailable: labels contain a single class";
  j["f1"] = r.f1;
  j["doa"] = opt(r.doa.mean);
  j["doa_per_attribute"] = std::move(per);
  j["doa_excluded_attributes"] = r.doa.excluded;
  j["doa_pair_counts"] = r.doa.pair_weight;
  j["counts"] = {{"logs", r.n_logs}, {"students", r.n_students}};
  j["doa_mode"] = to_string(r.doa_options.mode);
  if (r.doa_options.mode == DoaMode::sampled) {
    j["doa_pairs"] = r.doa_options.n_pairs;
    j["doa_seed"] = r.doa_options.seed;
  }
  j["conventions"] = {
      {"accuracy_threshold", "probability >= 0.5 predicts correct"},
      {"auc", "Mann-Whitney with midranks"},
      {"doa_ties", "strict order; tied proficiencies count toward neither numerator nor Z"},
      {"doa_convention", to_string(r.doa_options.convention)},
      {"doa_exclusions", "attributes with Z = 0 or no co-answered evidence are left out of the mean"},
      {"doa_no_coanswer", "an exercise without co-answers contributes 0"},
      {"split", "per_student"},
      {"adam_state", "fresh per parameter phase"},
      {"probability_clamp", kProbClamp}};
  j["outer_epochs"] = r.outer_epochs;
  j["variant"] = r.variant;
  j["seed"] = r.seed;
  j["tree"] = r.tree;
  j["tree_infix"] = r.tree_infix;
  return j;
}

}  // namespace scdm

#endif  // SCDM_IO_HPP

#ifndef SCDM_TRAINER_HPP
#define SCDM_TRAINER_HPP

// Alternating SCDM driver and its two ablations:
//   full     PO (Adam) then GP, every outer epoch
//   wo_gp    PO only, the tree stays f_init
//   wo_adam  ES over parameter candidates in place of Adam, then GP

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "scdm/autodiff.hpp"
#include "scdm/common.hpp"
#include "scdm/dataset.hpp"
#include "scdm/exprtree.hpp"
#include "scdm/gp.hpp"
#include "scdm/metrics.hpp"

namespace scdm {

enum class Variant : std::uint8_t { full, wo_gp, wo_adam };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::wo_gp: return "wo_gp";
    case Variant::wo_adam: return "wo_adam";
  }
  return "full";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "full") return Variant::full;
  if (s == "wo_gp") return Variant::wo_gp;
  if (s == "wo_adam") return Variant::wo_adam;
  throw ConfigError("unknown variant '" + s + "' (expected full, wo_gp or wo_adam)");
}

struct EsConfig {
  double learning_rate = 0.1;
  std::size_t population_size = 100;
  std::size_t generations = 50;
  double mutation_rate = 0.5;
  std::size_t tournament_k = 3;

  void check() const {
    if (!(learning_rate > 0.0)) throw ConfigError("es.learning_rate must be > 0");
    if (population_size == 0) throw ConfigError("es.population_size must be >= 1");
    if (mutation_rate < 0.0 || mutation_rate > 1.0) throw ConfigError("es.mutation_rate must be in [0,1]");
    if (tournament_k == 0) throw ConfigError("es.tournament_k must be >= 1");
  }
};

struct TrainConfig {
  std::size_t outer_epochs = 10;
  PoConfig po;
  GpConfig gp;
  EsConfig es;
  Variant variant = Variant::full;
  std::uint64_t seed = 0;
  double disc_scale = 10.0;
  std::size_t threads = 1;  // not part of the result; never serialised with the model

  void check() const {
    if (outer_epochs == 0) throw ConfigError("outer_epochs must be >= 1");
    if (po.batch_size == 0) throw ConfigError("po.batch_size must be >= 1");
    if (!(po.learning_rate > 0.0)) throw ConfigError("po.learning_rate must be > 0");
    if (!(disc_scale > 0.0)) throw ConfigError("disc_scale must be > 0");
    gp.check();
    es.check();
  }
};

struct EpochRecord {
  std::size_t epoch = 0;       // 1-based
  double po_loss = 0.0;        // train loss right after the parameter phase
  double train_loss = 0.0;     // train loss of the epoch's final (params, tree)
  double train_accuracy = 0.0;
  double best_fitness = 0.0;   // GP fitness of the chosen tree
  std::string tree;            // infix
};

struct TrainedModel {
  ModelParams params;
  ExprTree tree;
  std::vector<EpochRecord> history;
  TrainConfig config;
  std::uint64_t seed = 0;
};

/// (rele ∘ (P − diff)) × disc
inline ExprTree make_f_init() {
  using namespace build;
  return mul(inner(rele(), sub(P(), diff())), disc());
}

/// L is carried by the bindings, not the tree; the argument is only checked.
inline ExprTree make_f_init(std::size_t n_attributes) {
  if (n_attributes == 0) throw std::invalid_argument("make_f_init: L must be >= 1");
  return make_f_init();
}

/// Sub-stream identifiers for derive_seed(master, epoch, phase).
enum Phase : std::uint64_t { kPhaseInit = 1, kPhasePo = 2, kPhaseGp = 3, kPhaseEs = 4 };

using RunLog = std::function<void(const std::string&)>;

inline std::uint64_t fingerprint(const ModelParams& params) {
  std::ostringstream os;
  write_params(os, params);
  return fnv1a(os.str());
}

inline std::uint64_t fingerprint(const ExprTree& tree) { return fnv1a(serialize(tree)); }

/// Evolutionary strategy over parameter candidates. Every candidate starts as
/// a copy of `start`; each generation mutates (Gaussian noise of scale
/// learning_rate on every raw entry, with probability mutation_rate per
/// candidate), scores by negative train loss and tournament-selects. Returns
/// the lowest-loss candidate seen.
inline ModelParams es_optimize(const ExprTree& tree, const ModelParams& start, const ResponseDataset& train,
                               const EsConfig& cfg, std::uint64_t seed, std::size_t threads = 1) {
  cfg.check();
  if (train.size() == 0) return start;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::vector<ModelParams> pop(cfg.population_size, start);
  std::vector<double> fitness(pop.size());
  std::vector<std::size_t> complexity(pop.size(), 0);

  auto score = [&](const ModelParams& p) {
    const double loss = cross_entropy(predict(tree, p, train), train.logs());
    return std::isfinite(loss) ? -loss : -std::numeric_limits<double>::infinity();
  };
  ModelParams best = start;
  double best_fitness = score(start);

  for (std::size_t g = 0; g < cfg.generations; ++g) {
    for (auto& cand : pop) {
      if (coin(rng) >= cfg.mutation_rate) continue;
      for (Matrix* m : cand.raw.buffers()) {
        for (auto& v : m->values()) v += cfg.learning_rate * noise(rng);
      }
    }
    parallel_for(pop.size(), threads, [&](std::size_t i) { fitness[i] = score(pop[i]); });
    for (std::size_t i = 0; i < pop.size(); ++i) {
      if (fitness[i] > best_fitness) {
        best_fitness = fitness[i];
        best = pop[i];
      }
    }
    const auto chosen = select_indices(fitness, complexity, pop.size(), cfg.tournament_k, rng,
                                       SelectionMode::tournament, /*tie_break=*/false);
    std::vector<ModelParams> next;
    next.reserve(pop.size());
    for (std::size_t i : chosen) next.push_back(pop[i]);
    pop = std::move(next);
  }
  return best;
}

namespace detail {

inline void log_line(const RunLog& log, const std::string& line) {
  if (log) log(line);
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << v;
  return os.str();
}

inline EpochRecord record_epoch(std::size_t epoch, double po_loss, double best_fitness, const ExprTree& tree,
                                const ModelParams& params, const ResponseDataset& train) {
  EpochRecord r;
  r.epoch = epoch;
  r.po_loss = po_loss;
  const auto probs = predict(tree, params, train);
  r.train_loss = cross_entropy(probs, train.logs());
  r.train_accuracy = accuracy(probs, train.labels());
  r.best_fitness = best_fitness;
  r.tree = to_infix(tree);
  return r;
}

/// Shared outer loop. `optimise` is the parameter phase, `search` the tree
/// phase (absent for wo_gp).
template <class Optimise, class Search>
TrainedModel alternate(const ResponseDataset& train, const TrainConfig& cfg, const RunLog& log, Optimise&& optimise,
                       Search&& search) {
  cfg.check();
  if (train.size() == 0) throw DataError("training set is empty");
  TrainedModel model{init_params(train.n_students(), train.n_exercises(), train.n_attributes(),
                                 derive_seed(cfg.seed, 0, kPhaseInit), cfg.disc_scale),
                     make_f_init(train.n_attributes()), {}, cfg, cfg.seed};
  log_line(log, "variant " + to_string(cfg.variant) + " T=" + std::to_string(cfg.outer_epochs) +
                    " seed=" + std::to_string(cfg.seed) + " logs=" + std::to_string(train.size()));

  for (std::size_t epoch = 1; epoch <= cfg.outer_epochs; ++epoch) {
    const std::string where = "epoch " + std::to_string(epoch);
    double po_loss = 0.0;
    try {
      const auto tree_before = fingerprint(model.tree);
      model.params = optimise(model.tree, model.params, epoch);
      if (fingerprint(model.tree) != tree_before) throw TrainingError("parameter phase modified the tree");
      po_loss = total_loss(model.tree, model.params, train);
    } catch (const TrainingError& e) {
      throw TrainingError(where + ", parameter phase: " + e.what());
    }
    log_line(log, where + " po_loss " + fmt(po_loss));

    double best_fitness = 0.0;
    try {
      const auto params_before = fingerprint(model.params);
      std::optional<EvolveResult> found = search(model.params, model.tree, epoch);
      if (fingerprint(model.params) != params_before) throw TrainingError("tree search modified the parameters");
      if (found) {
        for (const auto& g : found->generations) {
          log_line(log, where + " gen " + std::to_string(g.generation) + " best " + fmt(g.best_fitness) + " mean " +
                            fmt(g.mean_fitness) + " tree " + g.best_infix);
        }
        model.tree = std::move(found->best);
        best_fitness = found->best_fitness;
      } else {
        best_fitness = accuracy(predict(model.tree, model.params, train), train.labels());
      }
    } catch (const GenerationError& e) {
      throw TrainingError(where + ", tree search: " + e.what());
    } catch (const TrainingError& e) {
      throw TrainingError(where + ", tree search: " + e.what());
    }
    model.history.push_back(record_epoch(epoch, po_loss, best_fitness, model.tree, model.params, train));
    const auto& r = model.history.back();
    log_line(log, where + " train_loss " + fmt(r.train_loss) + " train_acc " + fmt(r.train_accuracy) + " tree " +
                      r.tree);
  }
  return model;
}

inline GpConfig gp_for(const TrainConfig& cfg) {
  GpConfig gp = cfg.gp;
  gp.threads = cfg.threads;
  return gp;
}

}  // namespace detail

inline TrainedModel run_scdm(const ResponseDataset& train, const TrainConfig& cfg, const RunLog& log = {}) {
  return detail::alternate(
      train, cfg, log,
      [&](const ExprTree& tree, const ModelParams& params, std::size_t epoch) {
        PoConfig po = cfg.po;
        po.seed = derive_seed(cfg.seed, epoch, kPhasePo);
        return fit_params(tree, params, train, po);
      },
      [&](const ModelParams& params, const ExprTree& current, std::size_t epoch) -> std::optional<EvolveResult> {
        std::mt19937_64 rng(derive_seed(cfg.seed, epoch, kPhaseGp));
        return evolve(params, train, detail::gp_for(cfg), rng, {}, &current);
      });
}

inline TrainedModel run_wo_gp(const ResponseDataset& train, const TrainConfig& cfg, const RunLog& log = {}) {
  return detail::alternate(
      train, cfg, log,
      [&](const ExprTree& tree, const ModelParams& params, std::size_t epoch) {
        PoConfig po = cfg.po;
        po.seed = derive_seed(cfg.seed, epoch, kPhasePo);
        return fit_params(tree, params, train, po);
      },
      [](const ModelParams&, const ExprTree&, std::size_t) -> std::optional<EvolveResult> { return std::nullopt; });
}

inline TrainedModel run_wo_adam(const ResponseDataset& train, const TrainConfig& cfg, const RunLog& log = {}) {
  return detail::alternate(
      train, cfg, log,
      [&](const ExprTree& tree, const ModelParams& params, std::size_t epoch) {
        return es_optimize(tree, params, train, cfg.es, derive_seed(cfg.seed, epoch, kPhaseEs), cfg.threads);
      },
      [&](const ModelParams& params, const ExprTree& current, std::size_t epoch) -> std::optional<EvolveResult> {
        std::mt19937_64 rng(derive_seed(cfg.seed, epoch, kPhaseGp));
        return evolve(params, train, detail::gp_for(cfg), rng, {}, &current);
      });
}

inline TrainedModel train(const ResponseDataset& train_set, const TrainConfig& cfg, const RunLog& log = {}) {
  switch (cfg.variant) {
    case Variant::wo_gp: return run_wo_gp(train_set, cfg, log);
    case Variant::wo_adam: return run_wo_adam(train_set, cfg, log);
    case Variant::full: break;
  }
  return run_scdm(train_set, cfg, log);
}

}  // namespace scdm

#endif  // SCDM_TRAINER_HPP

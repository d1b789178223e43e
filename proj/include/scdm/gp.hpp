#ifndef SCDM_GP_HPP
#define SCDM_GP_HPP

// Genetic-programming search for the interaction function with the
// diagnostic parameters held fixed: subtree crossover, insert/prune mutation,
// tournament (or truncation) selection and an elitist generation loop.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "scdm/autodiff.hpp"
#include "scdm/common.hpp"
#include "scdm/dataset.hpp"
#include "scdm/exprtree.hpp"
#include "scdm/metrics.hpp"

namespace scdm {

enum class SelectionMode : std::uint8_t { tournament, truncation };

struct GpConfig {
  std::size_t population_size = 200;
  std::size_t generations = 10;
  double crossover_rate = 0.5;
  double mutation_rate = 0.1;
  int init_depth = 5;
  std::size_t tournament_k = 3;
  SelectionMode selection_mode = SelectionMode::tournament;
  int max_height = 12;
  int variation_retries = 20;   // crossover / mutation attempts before identity fallback
  int generation_retries = 200; // random_tree attempts
  int insert_depth = 2;         // height bound of subtrees created by insert mutation
  bool allow_broadcast = true;
  bool complexity_tie_break = true;
  bool keep_incumbent = false;  // replace the first random tree by the caller's current tree
  std::size_t threads = 1;

  KindRules rules() const { return {allow_broadcast}; }

  void check() const {
    if (population_size == 0 || population_size % 2 != 0) {
      throw ConfigError("gp.population_size must be a positive even number");
    }
    if (crossover_rate < 0.0 || crossover_rate > 1.0) throw ConfigError("gp.crossover_rate must be in [0,1]");
    if (mutation_rate < 0.0 || mutation_rate > 1.0) throw ConfigError("gp.mutation_rate must be in [0,1]");
    if (init_depth < 2) throw ConfigError("gp.init_depth must be >= 2");
    if (tournament_k == 0) throw ConfigError("gp.tournament_k must be >= 1");
    if (max_height < init_depth) throw ConfigError("gp.max_height must be >= gp.init_depth");
    if (insert_depth < 1) throw ConfigError("gp.insert_depth must be >= 1");
  }
};

struct Individual {
  ExprTree tree;
  std::optional<double> fitness;
};

namespace detail {
inline bool acceptable(const ExprTree& t, const GpConfig& cfg) {
  return t.height() <= cfg.max_height && is_valid(t, cfg.rules());
}

template <class Rng>
std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

template <class Rng>
double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}
}  // namespace detail

/// Subtree crossover. Trees of height < 2 pass through unchanged; otherwise a
/// uniformly chosen node of each copy is swapped, retrying invalid or
/// over-tall offspring before falling back to the parents.
template <std::uniform_random_bit_generator Rng>
std::pair<ExprTree, ExprTree> crossover(const ExprTree& f1, const ExprTree& f2, Rng& rng, const GpConfig& cfg) {
  if (f1.height() < 2 || f2.height() < 2) return {f1, f2};
  for (int attempt = 0; attempt < cfg.variation_retries; ++attempt) {
    const std::size_t n1 = detail::uniform_index(rng, f1.size());
    const std::size_t n2 = detail::uniform_index(rng, f2.size());
    ExprTree c1 = f1.replace_subtree(n1, f2.subtree(n2));
    ExprTree c2 = f2.replace_subtree(n2, f1.subtree(n1));
    if (detail::acceptable(c1, cfg) && detail::acceptable(c2, cfg)) return {std::move(c1), std::move(c2)};
  }
  return {f1, f2};
}

/// Insert step: `wrapper` (operator-rooted) takes the subtree at `node` as
/// its left child and the result replaces that subtree.
inline ExprTree insert_subtree(const ExprTree& f, std::size_t node, const ExprTree& wrapper) {
  if (is_terminal(wrapper.root())) throw std::invalid_argument("insert_subtree: wrapper must be an operator");
  return f.replace_subtree(node, wrapper.replace_subtree(1, f.subtree(node)));
}

/// Prune step: the subtree at `outer` is replaced by its own descendant
/// subtree at `inner` (outer <= inner < subtree_end(outer)).
inline ExprTree prune_subtree(const ExprTree& f, std::size_t outer, std::size_t inner) {
  if (inner < outer || inner >= f.subtree_end(outer)) throw std::invalid_argument("prune_subtree: not a descendant");
  return f.replace_subtree(outer, f.subtree(inner));
}

/// Insert (probability 0.5) or prune mutation. Prune leaves trees of height
/// < 5 unchanged. Invalid results are retried, then the input is returned.
template <std::uniform_random_bit_generator Rng>
ExprTree mutate(const ExprTree& f, Rng& rng, const GpConfig& cfg) {
  if (detail::uniform01(rng) < 0.5) {
    for (int attempt = 0; attempt < cfg.variation_retries; ++attempt) {
      const std::size_t node = detail::uniform_index(rng, f.size());
      const ExprTree wrapper = grow(rng, cfg.insert_depth, /*operator_root=*/true);
      ExprTree out = insert_subtree(f, node, wrapper);
      if (detail::acceptable(out, cfg)) return out;
    }
    return f;
  }
  if (f.height() < 5) return f;
  for (int attempt = 0; attempt < cfg.variation_retries; ++attempt) {
    const std::size_t outer = detail::uniform_index(rng, f.size());
    const std::size_t span = f.subtree_end(outer) - outer;
    const std::size_t inner = outer + detail::uniform_index(rng, span);
    ExprTree out = prune_subtree(f, outer, inner);
    if (detail::acceptable(out, cfg)) return out;
  }
  return f;
}

/// Training accuracy of trees under fixed parameters. Inputs are gathered
/// once; trees yielding a non-finite score anywhere get fitness 0.
class FitnessEvaluator {
 public:
  FitnessEvaluator(const ModelParams& params, const ResponseDataset& train)
      : inputs_(gather_inputs(params, train.qmatrix(), train.logs())), labels_(train.labels()) {}

  double operator()(const ExprTree& tree) const {
    if (labels_.empty()) return 0.0;
    const auto probs = predict_inputs(tree, inputs_);
    for (double y : probs) {
      if (!std::isfinite(y)) return 0.0;
    }
    return accuracy(probs, labels_);
  }

 private:
  BatchInputs inputs_;
  std::vector<double> labels_;
};

/// Annotates every individual with its training accuracy. Only the training
/// set is passed in, so test logs can never influence fitness.
inline void evaluate_fitness(std::vector<Individual>& pop, const ModelParams& params, const ResponseDataset& train,
                             std::size_t threads = 1) {
  const FitnessEvaluator fitness(params, train);
  parallel_for(pop.size(), threads, [&](std::size_t i) { pop[i].fitness = fitness(pop[i].tree); });
}

namespace detail {
/// Strict "a is fitter than b" over (fitness, optionally node count); equal
/// keys fall back to the lower index at the call sites.
inline bool fitter(double fa, std::size_t ca, double fb, std::size_t cb, bool tie_break) {
  if (fa != fb) return fa > fb;
  return tie_break && ca > cb;
}
}  // namespace detail

/// Indices chosen by selection over parallel arrays of fitness and
/// complexity. Tournament: `times` rounds of k uniform draws with replacement,
/// keeping the fittest (ties: larger complexity, then lower index).
/// Truncation: repeatedly take and remove the global best.
template <std::uniform_random_bit_generator Rng>
std::vector<std::size_t> select_indices(std::span<const double> fitness, std::span<const std::size_t> complexity,
                                        std::size_t times, std::size_t k, Rng& rng, SelectionMode mode,
                                        bool tie_break = true) {
  const std::size_t n = fitness.size();
  if (n == 0) throw std::invalid_argument("selection: empty population");
  auto better = [&](std::size_t a, std::size_t b) {
    if (detail::fitter(fitness[a], complexity[a], fitness[b], complexity[b], tie_break)) return true;
    if (detail::fitter(fitness[b], complexity[b], fitness[a], complexity[a], tie_break)) return false;
    return a < b;
  };
  std::vector<std::size_t> chosen;
  chosen.reserve(times);
  if (mode == SelectionMode::truncation) {
    if (times > n) throw std::invalid_argument("selection: truncation needs times <= population size");
    std::vector<std::size_t> remaining(n);
    std::iota(remaining.begin(), remaining.end(), std::size_t{0});
    while (chosen.size() < times) {
      auto it = std::min_element(remaining.begin(), remaining.end(),
                                 [&](std::size_t a, std::size_t b) { return better(a, b); });
      chosen.push_back(*it);
      remaining.erase(it);
    }
    return chosen;
  }
  for (std::size_t round = 0; round < times; ++round) {
    std::size_t best = detail::uniform_index(rng, n);
    for (std::size_t draw = 1; draw < k; ++draw) {
      const std::size_t c = detail::uniform_index(rng, n);
      if (better(c, best)) best = c;
    }
    chosen.push_back(best);
  }
  return chosen;
}

template <std::uniform_random_bit_generator Rng>
std::vector<Individual> tournament_select(const std::vector<Individual>& pop, std::size_t times, std::size_t k,
                                          Rng& rng, SelectionMode mode = SelectionMode::tournament,
                                          bool tie_break = true) {
  std::vector<double> fit(pop.size());
  std::vector<std::size_t> size(pop.size());
  for (std::size_t i = 0; i < pop.size(); ++i) {
    if (!pop[i].fitness) throw std::invalid_argument("selection: individual without fitness");
    fit[i] = *pop[i].fitness;
    size[i] = pop[i].tree.size();
  }
  std::vector<Individual> out;
  out.reserve(times);
  for (std::size_t i : select_indices(fit, size, times, k, rng, mode, tie_break)) out.push_back(pop[i]);
  return out;
}

struct GenerationStats {
  std::size_t generation = 0;  // 0 = initial population
  double best_fitness = 0.0;
  double mean_fitness = 0.0;
  std::string best_infix;
};

struct EvolveResult {
  ExprTree best;
  double best_fitness = 0.0;
  std::vector<GenerationStats> generations;
};

/// Generation loop: V random trees, then per generation crossover of adjacent
/// pairs, per-individual mutation, fitness evaluation and selection. Returns
/// the fittest tree evaluated at any point.
template <std::uniform_random_bit_generator Rng>
EvolveResult evolve(const ModelParams& params, const ResponseDataset& train, const GpConfig& cfg, Rng& rng,
                    const std::function<void(const GenerationStats&)>& observer = {},
                    const ExprTree* incumbent = nullptr) {
  cfg.check();
  const FitnessEvaluator fitness(params, train);
  // Structurally equal trees share one fitness value for fixed parameters.
  std::unordered_map<std::string, double> memo;

  std::vector<Individual> pop;
  pop.reserve(cfg.population_size);
  const RandomTreeOptions gen_opts{cfg.generation_retries, cfg.rules()};
  for (std::size_t i = 0; i < cfg.population_size; ++i) pop.push_back({random_tree(cfg.init_depth, rng, gen_opts), {}});
  if (incumbent && cfg.keep_incumbent) pop.front() = {*incumbent, {}};

  std::optional<Individual> best;
  auto evaluate_all = [&](std::size_t generation) {
    std::vector<std::string> keys(pop.size());
    std::vector<std::size_t> todo;
    for (std::size_t i = 0; i < pop.size(); ++i) {
      keys[i] = serialize(pop[i].tree);
      if (auto it = memo.find(keys[i]); it != memo.end()) {
        pop[i].fitness = it->second;
      } else {
        todo.push_back(i);
      }
    }
    parallel_for(todo.size(), cfg.threads, [&](std::size_t t) { pop[todo[t]].fitness = fitness(pop[todo[t]].tree); });
    for (std::size_t i : todo) memo.emplace(keys[i], *pop[i].fitness);

    GenerationStats stats;
    stats.generation = generation;
    std::size_t gen_best = 0;
    double sum = 0.0;
    for (std::size_t i = 0; i < pop.size(); ++i) {
      sum += *pop[i].fitness;
      if (detail::fitter(*pop[i].fitness, pop[i].tree.size(), *pop[gen_best].fitness, pop[gen_best].tree.size(),
                         cfg.complexity_tie_break)) {
        gen_best = i;
      }
    }
    if (!best || detail::fitter(*pop[gen_best].fitness, pop[gen_best].tree.size(), *best->fitness,
                                best->tree.size(), cfg.complexity_tie_break)) {
      best = pop[gen_best];
    }
    stats.best_fitness = *pop[gen_best].fitness;
    stats.mean_fitness = sum / static_cast<double>(pop.size());
    stats.best_infix = to_infix(pop[gen_best].tree);
    return stats;
  };

  EvolveResult result{pop.front().tree, 0.0, {}};
  result.generations.push_back(evaluate_all(0));
  if (observer) observer(result.generations.back());

  for (std::size_t g = 1; g <= cfg.generations; ++g) {
    for (std::size_t i = 0; i < pop.size(); ++i) {
      // 1-based odd positions pair with their successor
      if (i % 2 == 0 && i + 1 < pop.size() && detail::uniform01(rng) < cfg.crossover_rate) {
        auto [a, b] = crossover(pop[i].tree, pop[i + 1].tree, rng, cfg);
        pop[i] = {std::move(a), {}};
        pop[i + 1] = {std::move(b), {}};
      }
      if (detail::uniform01(rng) < cfg.mutation_rate) pop[i] = {mutate(pop[i].tree, rng, cfg), {}};
    }
    result.generations.push_back(evaluate_all(g));
    if (observer) observer(result.generations.back());
    pop = tournament_select(pop, cfg.population_size, cfg.tournament_k, rng, cfg.selection_mode,
                            cfg.complexity_tie_break);
  }
  result.best = best->tree;
  result.best_fitness = *best->fitness;
  return result;
}

}  // namespace scdm

#endif  // SCDM_GP_HPP

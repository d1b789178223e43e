#include <gtest/gtest.h>

#include <sstream>

#include "scdm/trainer.hpp"

using namespace scdm;

namespace {

const SyntheticData& data() {
  static const SyntheticData d = generate_synthetic(30, 8, 3, 0.7, 21);
  return d;
}

TrainConfig small_config(Variant v = Variant::full) {
  TrainConfig cfg;
  cfg.variant = v;
  cfg.outer_epochs = 3;
  cfg.seed = 5;
  cfg.po.learning_rate = 0.02;
  cfg.gp.population_size = 20;
  cfg.gp.generations = 2;
  cfg.es.population_size = 10;
  cfg.es.generations = 3;
  return cfg;
}

std::string params_text(const ModelParams& p) {
  std::ostringstream os;
  write_params(os, p);
  return os.str();
}

}  // namespace

TEST(InitialFunction, Shape) {
  const auto t = make_f_init(4);
  EXPECT_EQ(serialize(t), "(mul (inner rele (sub P diff)) disc)");
  EXPECT_EQ(count_nodes(t), 7u);
  EXPECT_TRUE(is_valid(t));
  EXPECT_THROW(make_f_init(0), std::invalid_argument);
}

TEST(Variant, Names) {
  for (auto v : {Variant::full, Variant::wo_gp, Variant::wo_adam}) EXPECT_EQ(variant_from_string(to_string(v)), v);
  EXPECT_THROW(variant_from_string("gp_only"), ConfigError);
}

TEST(Train, HistoryHasOneRecordPerEpoch) {
  const auto m = train(data().dataset, small_config());
  ASSERT_EQ(m.history.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(m.history[i].epoch, i + 1);
  EXPECT_EQ(m.history.back().tree, to_infix(m.tree));
  EXPECT_TRUE(is_valid(m.tree));
}

TEST(Train, OneEpochIsOneParameterPhaseThenOneSearch) {
  auto cfg = small_config();
  cfg.outer_epochs = 1;
  const auto& ds = data().dataset;
  const auto m = train(ds, cfg);

  auto params = init_params(30, 8, 3, derive_seed(cfg.seed, 0, kPhaseInit));
  PoConfig po = cfg.po;
  po.seed = derive_seed(cfg.seed, 1, kPhasePo);
  params = fit_params(make_f_init(), params, ds, po);
  std::mt19937_64 rng(derive_seed(cfg.seed, 1, kPhaseGp));
  const auto found = evolve(params, ds, cfg.gp, rng);

  EXPECT_EQ(params_text(m.params), params_text(params));
  EXPECT_EQ(m.tree, found.best);
  EXPECT_EQ(m.history[0].best_fitness, found.best_fitness);
}

TEST(Train, WithoutGpKeepsInitialTree) {
  const auto m = train(data().dataset, small_config(Variant::wo_gp));
  EXPECT_EQ(m.tree, make_f_init());
  for (const auto& r : m.history) EXPECT_EQ(r.tree, "((rele ∘ (P − diff)) × disc)");
  EXPECT_LT(m.history.back().train_loss, m.history.front().po_loss + 1e-9);
}

TEST(Train, DeterministicAcrossRunsAndThreads) {
  auto cfg = small_config();
  const auto a = train(data().dataset, cfg);
  cfg.threads = 3;
  const auto b = train(data().dataset, cfg);
  EXPECT_EQ(params_text(a.params), params_text(b.params));
  EXPECT_EQ(a.tree, b.tree);
  cfg.seed = 6;
  const auto c = train(data().dataset, cfg);
  EXPECT_NE(params_text(a.params), params_text(c.params));
}

TEST(Train, WithoutAdamRunsAndIsDeterministic) {
  auto cfg = small_config(Variant::wo_adam);
  cfg.outer_epochs = 2;
  const auto a = train(data().dataset, cfg);
  const auto b = train(data().dataset, cfg);
  EXPECT_EQ(params_text(a.params), params_text(b.params));
  EXPECT_EQ(a.tree, b.tree);
  EXPECT_EQ(a.history.size(), 2u);
}

TEST(Train, LogLinesPerEpoch) {
  std::vector<std::string> lines;
  train(data().dataset, small_config(), [&](const std::string& s) { lines.push_back(s); });
  std::size_t gen_lines = 0;
  for (const auto& l : lines) gen_lines += l.find(" gen ") != std::string::npos;
  EXPECT_EQ(gen_lines, 3u * 3u);  // generations 0..2 per epoch
  EXPECT_EQ(lines.front().rfind("variant full", 0), 0u);
}

TEST(Train, RejectsBadConfigAndEmptyData) {
  auto cfg = small_config();
  cfg.outer_epochs = 0;
  EXPECT_THROW(train(data().dataset, cfg), ConfigError);
  const auto empty = ResponseDataset::subset({}, 3, data().dataset.qmatrix());
  EXPECT_THROW(train(empty, small_config()), DataError);
}

TEST(Train, FullModelLearnsSomething) {
  auto cfg = small_config();
  cfg.outer_epochs = 5;
  const auto m = train(data().dataset, cfg);
  EXPECT_GT(m.history.back().train_accuracy, data().dataset.correct_rate() - 0.05);
  EXPECT_GT(m.history.back().train_accuracy, 0.55);
}

TEST(PhaseIsolation, SearchMayNotTouchParameters) {
  const auto cfg = small_config();
  auto optimise = [](const ExprTree&, const ModelParams& p, std::size_t) { return p; };
  auto rogue = [](const ModelParams& p, const ExprTree&, std::size_t) -> std::optional<EvolveResult> {
    const_cast<ModelParams&>(p).raw.p(0, 0) += 1.0;
    return std::nullopt;
  };
  try {
    detail::alternate(data().dataset, cfg, {}, optimise, rogue);
    FAIL();
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1, tree search"), std::string::npos);
  }
}

TEST(PhaseIsolation, ParameterPhaseMayNotTouchTree) {
  const auto cfg = small_config();
  auto rogue = [](const ExprTree& t, const ModelParams& p, std::size_t) {
    const_cast<ExprTree&>(t) = build::inner(build::rele(), build::P());
    return p;
  };
  auto search = [](const ModelParams&, const ExprTree&, std::size_t) -> std::optional<EvolveResult> {
    return std::nullopt;
  };
  EXPECT_THROW(detail::alternate(data().dataset, cfg, {}, rogue, search), TrainingError);
}

TEST(Es, NoMutationReturnsStart) {
  const auto& ds = data().dataset;
  const auto start = init_params(30, 8, 3, 1);
  EsConfig es;
  es.mutation_rate = 0.0;
  es.generations = 1;
  es.population_size = 5;
  EXPECT_EQ(params_text(es_optimize(make_f_init(), start, ds, es, 1)), params_text(start));
}

TEST(Es, NeverWorseThanStart) {
  const auto& ds = data().dataset;
  const auto start = init_params(30, 8, 3, 1);
  EsConfig es;
  es.population_size = 20;
  es.generations = 10;
  const auto out = es_optimize(make_f_init(), start, ds, es, 2);
  EXPECT_LT(total_loss(make_f_init(), out, ds), total_loss(make_f_init(), start, ds));
}

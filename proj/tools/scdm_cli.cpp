// scdm: train, evaluate, diagnose, export and synthesise.
//
// Exit codes: 0 ok, 1 configuration error, 2 data error, 3 training failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "scdm/dataset.hpp"
#include "scdm/exprtree.hpp"
#include "scdm/io.hpp"
#include "scdm/metrics.hpp"
#include "scdm/trainer.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitData = 2;
constexpr int kExitTraining = 3;

// Above this many students exact DOA needs --force.
constexpr std::size_t kExactDoaLimit = 1000;

std::size_t default_threads() {
  if (const char* env = std::getenv("SCDM_THREADS")) {
    const auto v = scdm::detail::parse_int<std::size_t>(env);
    if (!v || *v == 0) throw scdm::ConfigError("SCDM_THREADS must be a positive integer");
    return *v;
  }
  return 1;
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw scdm::DataError("cannot write " + p.string());
  out << text;
}

std::string to_csv(const scdm::ResponseDataset& ds) {
  std::ostringstream os;
  scdm::write_logs(os, ds);
  return os.str();
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant;
  std::optional<std::string> out;
};

// Relative paths inside a config file are taken from the file's directory.
std::string resolve(const fs::path& base, const std::string& p) {
  if (p.empty() || fs::path(p).is_absolute()) return p;
  return fs::absolute(base / p).lexically_normal().string();
}

int cmd_train(const TrainArgs& a, std::size_t threads) {
  scdm::RunConfigFile run = scdm::load_run_config(a.config);
  const fs::path base = fs::path(a.config).parent_path();
  run.data.logs = resolve(base, run.data.logs);
  run.data.qmatrix = resolve(base, run.data.qmatrix);
  run.output = a.out ? *a.out : resolve(base, run.output);
  if (a.seed) run.train.seed = *a.seed;
  if (a.variant) run.train.variant = scdm::variant_from_string(*a.variant);
  run.train.threads = threads;
  run.train.check();
  if (run.data.logs.empty() || run.data.qmatrix.empty()) {
    throw scdm::ConfigError("data.logs and data.qmatrix must be set");
  }

  const scdm::QMatrix q = scdm::load_qmatrix(run.data.qmatrix);
  const scdm::ResponseDataset ds = scdm::load_logs(run.data.logs, run.data.n_students, q);
  scdm::attribute_labels(run.data, q.n_attributes());  // validates the label count
  const auto parts = scdm::split(ds, run.data.test_fraction, run.data.split_seed);

  const fs::path out(run.output);
  fs::create_directories(out);
  std::ofstream log(out / "run.log", std::ios::binary);
  const auto model = scdm::train(parts.train, run.train, [&](const std::string& line) {
    log << line << '\n';
    log.flush();
  });
  scdm::save_model(out, model, run);
  write_text(out / "train.csv", to_csv(parts.train));
  write_text(out / "test.csv", to_csv(parts.test));

  const auto& last = model.history.back();
  std::cout << "variant " << scdm::to_string(model.config.variant) << ", T=" << model.config.outer_epochs
            << ", seed " << model.seed << '\n'
            << "train accuracy " << std::fixed << std::setprecision(4) << last.train_accuracy << ", train loss "
            << last.train_loss << '\n'
            << "tree " << scdm::to_infix(model.tree) << '\n'
            << "model written to " << out.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string model;
  std::optional<std::string> logs;
  std::optional<std::string> qmatrix;
  std::string doa_mode = "auto";
  std::size_t doa_pairs = 1'000'000;
  std::uint64_t doa_seed = 0;
  std::string doa_convention = "discordant";
  bool force = false;
  std::optional<std::string> out;
};

int cmd_eval(const EvalArgs& a) {
  const auto loaded = scdm::load_model(a.model);
  const fs::path dir(a.model);
  const std::string logs_path = a.logs ? *a.logs : (dir / "test.csv").string();
  const std::string q_path = a.qmatrix ? *a.qmatrix : loaded.run.data.qmatrix;
  const scdm::QMatrix q = scdm::load_qmatrix(q_path);
  const scdm::ResponseDataset ds = scdm::load_logs(logs_path, loaded.model.params.n_students(), q);

  scdm::DoaOptions doa;
  if (a.doa_mode == "auto") {
    doa.mode = ds.n_students() <= kExactDoaLimit ? scdm::DoaMode::exact : scdm::DoaMode::sampled;
  } else if (a.doa_mode == "exact") {
    if (ds.n_students() > kExactDoaLimit && !a.force) {
      throw scdm::ConfigError("exact DOA on " + std::to_string(ds.n_students()) + " students (> " +
                              std::to_string(kExactDoaLimit) + ") needs --force");
    }
    doa.mode = scdm::DoaMode::exact;
  } else if (a.doa_mode == "sampled") {
    doa.mode = scdm::DoaMode::sampled;
  } else {
    throw scdm::ConfigError("unknown --doa-mode '" + a.doa_mode + "'");
  }
  doa.n_pairs = a.doa_pairs;
  doa.seed = a.doa_seed;
  if (a.doa_convention == "discordant") {
    doa.convention = scdm::DoaConvention::discordant;
  } else if (a.doa_convention == "co_answered") {
    doa.convention = scdm::DoaConvention::co_answered;
  } else {
    throw scdm::ConfigError("unknown --doa-convention '" + a.doa_convention + "'");
  }

  const auto report = scdm::evaluate(loaded.model, ds, doa);
  const std::string text = scdm::to_json(report).dump(2) + "\n";
  std::cout << text;
  write_text(a.out ? fs::path(*a.out) : dir / "eval.json", text);
  return 0;
}

// ---------------------------------------------------------------------------

struct DiagnoseArgs {
  std::string model;
  std::optional<std::size_t> student;
  bool all = false;
  std::vector<std::size_t> exercises;
  std::optional<std::string> out;
};

int cmd_diagnose(const DiagnoseArgs& a) {
  const auto loaded = scdm::load_model(a.model);
  const auto& params = loaded.model.params;
  const std::size_t N = params.n_students();
  const std::size_t M = params.n_exercises();
  const std::size_t L = params.n_attributes();
  const auto labels = scdm::attribute_labels(loaded.run.data, L);
  if (!a.all && !a.student) throw scdm::ConfigError("diagnose needs --student or --all");
  if (a.student && *a.student >= N) {
    throw scdm::DataError("student " + std::to_string(*a.student) + " out of range (N=" + std::to_string(N) + ")");
  }
  for (std::size_t j : a.exercises) {
    if (j >= M) throw scdm::DataError("exercise " + std::to_string(j) + " out of range (M=" + std::to_string(M) + ")");
  }
  std::vector<std::size_t> students;
  if (a.all) {
    for (std::size_t s = 0; s < N; ++s) students.push_back(s);
  } else {
    students.push_back(*a.student);
  }

  std::cout << std::fixed << std::setprecision(4);
  std::cout << "student";
  for (const auto& l : labels) std::cout << '\t' << l;
  std::cout << '\n';
  for (std::size_t s : students) {
    std::cout << s;
    for (std::size_t k = 0; k < L; ++k) std::cout << '\t' << params.proficiency(s, k);
    std::cout << '\n';
  }
  if (!a.exercises.empty()) {
    std::cout << "\nexercise";
    for (const auto& l : labels) std::cout << '\t' << l;
    std::cout << "\tdisc\n";
    for (std::size_t j : a.exercises) {
      std::cout << j;
      for (std::size_t k = 0; k < L; ++k) std::cout << '\t' << params.difficulty(j, k);
      std::cout << '\t' << params.discrimination(j) << '\n';
    }
  }

  // long-form plot data: one row per (student, attribute[, exercise])
  std::ostringstream plot;
  plot << std::setprecision(17);
  plot << "student,attribute,proficiency,exercise,difficulty\n";
  for (std::size_t s : students) {
    for (std::size_t k = 0; k < L; ++k) {
      if (a.exercises.empty()) {
        plot << s << ',' << labels[k] << ',' << params.proficiency(s, k) << ",,\n";
        continue;
      }
      for (std::size_t j : a.exercises) {
        plot << s << ',' << labels[k] << ',' << params.proficiency(s, k) << ',' << j << ','
             << params.difficulty(j, k) << '\n';
      }
    }
  }
  const fs::path plot_path = a.out ? fs::path(*a.out) : fs::path(a.model) / "diagnosis.csv";
  write_text(plot_path, plot.str());
  std::cerr << "plot data written to " << plot_path.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct ExportArgs {
  std::string model;
  std::string format = "infix";
  std::optional<std::string> out;
};

int cmd_export_tree(const ExportArgs& a) {
  std::string text;
  if (a.format != "infix" && a.format != "graph" && a.format != "structured") {
    throw scdm::ConfigError("unknown --format '" + a.format + "' (expected infix, graph or structured)");
  }
  const auto loaded = scdm::load_model(a.model);
  const auto& tree = loaded.model.tree;
  if (a.format == "infix") {
    text = scdm::to_infix(tree) + "\n";
  } else if (a.format == "graph") {
    text = scdm::to_dot(tree);
  } else {
    text = scdm::serialize(tree) + "\n";
  }
  if (a.out) {
    write_text(*a.out, text);
  } else {
    std::cout << text;
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::size_t students = 200;
  std::size_t exercises = 20;
  std::size_t attributes = 8;
  double density = 1.0;
  std::uint64_t seed = 0;
  std::string out = "synthetic";
};

int cmd_synth(const SynthArgs& a) {
  if (a.students == 0 || a.exercises == 0 || a.attributes == 0) {
    throw scdm::ConfigError("--students, --exercises and --attributes must be >= 1");
  }
  if (!(a.density > 0.0 && a.density <= 1.0)) throw scdm::ConfigError("--density must lie in (0, 1]");
  const auto data = scdm::generate_synthetic(a.students, a.exercises, a.attributes, a.density, a.seed);
  const fs::path out(a.out);
  fs::create_directories(out);

  write_text(out / "logs.csv", to_csv(data.dataset));
  std::ostringstream q;
  scdm::write_qmatrix(q, data.dataset.qmatrix());
  write_text(out / "qmatrix.csv", q.str());

  auto rows = [](const scdm::Matrix& m) {
    scdm::json arr = scdm::json::array();
    for (std::size_t r = 0; r < m.rows(); ++r) {
      scdm::json row = scdm::json::array();
      for (std::size_t c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
      arr.push_back(std::move(row));
    }
    return arr;
  };
  scdm::json truth;
  truth["bayes_accuracy"] = data.truth.bayes_accuracy;
  truth["generator"] = {{"students", a.students}, {"exercises", a.exercises}, {"attributes", a.attributes},
                        {"density", a.density},   {"seed", a.seed}};
  truth["true_p"] = rows(data.truth.true_p);
  truth["true_diff"] = rows(data.truth.true_diff);
  truth["true_disc"] = data.truth.true_disc;
  write_text(out / "truth.json", truth.dump(2) + "\n");

  scdm::RunConfigFile cfg;
  cfg.data.logs = "logs.csv";
  cfg.data.qmatrix = "qmatrix.csv";
  cfg.data.n_students = a.students;
  cfg.output = "model";
  write_text(out / "config.json", scdm::to_json(cfg).dump(2) + "\n");

  std::cout << "wrote " << data.dataset.size() << " logs (" << a.students << " students, " << a.exercises
            << " exercises, " << a.attributes << " attributes) to " << out.string() << "; bayes accuracy "
            << std::fixed << std::setprecision(4) << data.truth.bayes_accuracy << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Symbolic cognitive diagnosis: train, evaluate, diagnose, export-tree, synth"};
  app.require_subcommand(1);
  std::optional<std::size_t> threads_flag;
  app.add_option("--threads", threads_flag, "Worker threads (default: $SCDM_THREADS or 1)")
      ->check(CLI::PositiveNumber);

  app.add_subcommand("defaults", "Print the default run configuration");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a run configuration");
  train_cmd->add_option("config", train.config, "Run configuration (JSON)")->required();
  train_cmd->add_option("--seed", train.seed, "Master seed (overrides train.seed)");
  train_cmd->add_option("--variant", train.variant, "full, wo_gp or wo_adam");
  train_cmd->add_option("--out", train.out, "Model directory (overrides output)");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a model on response logs");
  eval_cmd->add_option("model", eval.model, "Model directory")->required();
  eval_cmd->add_option("--logs", eval.logs, "Logs CSV (default: <model>/test.csv)");
  eval_cmd->add_option("--qmatrix", eval.qmatrix, "Q-matrix CSV (default: from the model's config)");
  eval_cmd->add_option("--doa-mode", eval.doa_mode, "auto, exact or sampled")->capture_default_str();
  eval_cmd->add_option("--doa-pairs", eval.doa_pairs, "Ordered pairs drawn in sampled mode")->capture_default_str();
  eval_cmd->add_option("--doa-seed", eval.doa_seed, "Seed for sampled mode")->capture_default_str();
  eval_cmd->add_option("--doa-convention", eval.doa_convention, "discordant or co_answered")
      ->capture_default_str();
  eval_cmd->add_flag("--force", eval.force, "Allow exact DOA on more than 1000 students");
  eval_cmd->add_option("--out", eval.out, "Report path (default: <model>/eval.json)");

  DiagnoseArgs diag;
  auto* diag_cmd = app.add_subcommand("diagnose", "Print diagnostic outcomes");
  diag_cmd->add_option("model", diag.model, "Model directory")->required();
  auto* student_opt = diag_cmd->add_option("--student", diag.student, "Student index");
  auto* all_opt = diag_cmd->add_flag("--all", diag.all, "All students");
  student_opt->excludes(all_opt);
  diag_cmd->add_option("--exercises", diag.exercises, "Exercise indices to include")->delimiter(',');
  diag_cmd->add_option("--out", diag.out, "Plot-data CSV (default: <model>/diagnosis.csv)");

  ExportArgs exp;
  auto* exp_cmd = app.add_subcommand("export-tree", "Write the fittest tree");
  exp_cmd->add_option("model", exp.model, "Model directory")->required();
  exp_cmd->add_option("--format", exp.format, "infix, graph or structured")->capture_default_str();
  exp_cmd->add_option("--out", exp.out, "Output file (default: stdout)");

  SynthArgs syn;
  auto* syn_cmd = app.add_subcommand("synth", "Generate a synthetic dataset");
  syn_cmd->add_option("--students", syn.students)->capture_default_str();
  syn_cmd->add_option("--exercises", syn.exercises)->capture_default_str();
  syn_cmd->add_option("--attributes", syn.attributes)->capture_default_str();
  syn_cmd->add_option("--density", syn.density, "Q-matrix attribute inclusion probability")->capture_default_str();
  syn_cmd->add_option("--seed", syn.seed)->capture_default_str();
  syn_cmd->add_option("--out", syn.out, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    const std::size_t threads = threads_flag ? *threads_flag : default_threads();
    if (app.got_subcommand("defaults")) {
      std::cout << scdm::to_json(scdm::RunConfigFile{}).dump(2) << '\n';
      return 0;
    }
    if (*train_cmd) return cmd_train(train, threads);
    if (*eval_cmd) return cmd_eval(eval);
    if (*diag_cmd) return cmd_diagnose(diag);
    if (*exp_cmd) return cmd_export_tree(exp);
    if (*syn_cmd) return cmd_synth(syn);
  } catch (const scdm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const scdm::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const scdm::TrainingError& e) {
    std::cerr << "training failed: " << e.what() << '\n';
    return kExitTraining;
  } catch (const scdm::GenerationError& e) {
    std::cerr << "training failed: " << e.what() << '\n';
    return kExitTraining;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  }
  return 0;
}

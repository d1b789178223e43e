#ifndef SCDM_AUTODIFF_HPP
#define SCDM_AUTODIFF_HPP

// Trainable diagnostic parameters, prediction, the summed cross-entropy loss
// with exact reverse-mode gradients, Adam, the continuous optimisation phase
// and a numeric monotonicity audit.
//
// Parameters are stored raw and mapped through sigmoids:
//   P = sigmoid(raw_p), diff = sigmoid(raw_diff), disc = disc_scale * sigmoid(raw_disc)

#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "scdm/batch_eval.hpp"
#include "scdm/common.hpp"
#include "scdm/dataset.hpp"
#include "scdm/exprtree.hpp"

namespace scdm {

/// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] before any log.
inline constexpr double kProbClamp = 1e-7;

/// Raw tensors sharing the parameter shapes; used for parameters, gradients
/// and optimizer moments alike. disc is stored as an M x 1 matrix.
struct RawTensors {
  Matrix p;     // N x L
  Matrix diff;  // M x L
  Matrix disc;  // M x 1

  static RawTensors zeros_like(const RawTensors& o) {
    return {Matrix(o.p.rows(), o.p.cols()), Matrix(o.diff.rows(), o.diff.cols()),
            Matrix(o.disc.rows(), o.disc.cols())};
  }
  std::array<Matrix*, 3> buffers() { return {&p, &diff, &disc}; }
  std::array<const Matrix*, 3> buffers() const { return {&p, &diff, &disc}; }

  friend bool operator==(const RawTensors&, const RawTensors&) = default;
};

struct ModelParams {
  RawTensors raw;
  double disc_scale = 10.0;

  std::size_t n_students() const { return raw.p.rows(); }
  std::size_t n_exercises() const { return raw.diff.rows(); }
  std::size_t n_attributes() const { return raw.p.cols(); }

  double proficiency(std::size_t s, std::size_t k) const { return sigmoid(raw.p(s, k)); }
  double difficulty(std::size_t j, std::size_t k) const { return sigmoid(raw.diff(j, k)); }
  double discrimination(std::size_t j) const { return disc_scale * sigmoid(raw.disc(j, 0)); }

  Matrix effective_p() const {
    Matrix out(raw.p.rows(), raw.p.cols());
    for (std::size_t t = 0; t < out.size(); ++t) out.values()[t] = sigmoid(raw.p.values()[t]);
    return out;
  }
  Matrix effective_diff() const {
    Matrix out(raw.diff.rows(), raw.diff.cols());
    for (std::size_t t = 0; t < out.size(); ++t) out.values()[t] = sigmoid(raw.diff.values()[t]);
    return out;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

inline void check_shapes(const ModelParams& params, const QMatrix& q) {
  if (params.n_exercises() != q.n_exercises() || params.n_attributes() != q.n_attributes() ||
      params.raw.disc.rows() != q.n_exercises()) {
    throw DataError("parameter shapes (M=" + std::to_string(params.n_exercises()) +
                    ", L=" + std::to_string(params.n_attributes()) + ") do not match the Q-matrix (M=" +
                    std::to_string(q.n_exercises()) + ", L=" + std::to_string(q.n_attributes()) + ")");
  }
}

/// Xavier-normal initialisation of the raw parameters: zero mean, standard
/// deviation sqrt(2 / (rows + cols)) per matrix.
inline ModelParams init_params(std::size_t n, std::size_t m, std::size_t l, std::uint64_t seed,
                               double disc_scale = 10.0) {
  if (n == 0 || m == 0 || l == 0) throw std::invalid_argument("init_params: dimensions must be >= 1");
  std::mt19937_64 rng(seed);
  auto xavier = [&](Matrix& mat) {
    const double sd = std::sqrt(2.0 / static_cast<double>(mat.rows() + mat.cols()));
    std::normal_distribution<double> dist(0.0, sd);
    for (auto& v : mat.values()) v = dist(rng);
  };
  ModelParams params{{Matrix(n, l), Matrix(m, l), Matrix(m, 1)}, disc_scale};
  for (Matrix* mat : params.raw.buffers()) xavier(*mat);
  return params;
}

struct StudentExercise {
  std::size_t student = 0;
  std::size_t exercise = 0;
};

/// Effective parameter values assembled per pair; rele comes from Q.
template <class Pairs>
BatchInputs gather_inputs(const ModelParams& params, const QMatrix& q, const Pairs& pairs) {
  check_shapes(params, q);
  const std::size_t L = params.n_attributes();
  BatchInputs in;
  in.batch = std::size(pairs);
  in.dims = L;
  in.p.resize(in.batch * L);
  in.rele.resize(in.batch * L);
  in.diff.resize(in.batch * L);
  in.disc.resize(in.batch);
  const Matrix p_eff = params.effective_p();
  const Matrix diff_eff = params.effective_diff();
  std::size_t r = 0;
  for (const auto& pr : pairs) {
    if (pr.student >= params.n_students()) {
      throw DataError("student index " + std::to_string(pr.student) + " out of range");
    }
    if (pr.exercise >= params.n_exercises()) {
      throw DataError("exercise index " + std::to_string(pr.exercise) + " out of range");
    }
    const auto qrow = q.row(pr.exercise);
    for (std::size_t k = 0; k < L; ++k) {
      in.p[r * L + k] = p_eff(pr.student, k);
      in.diff[r * L + k] = diff_eff(pr.exercise, k);
      in.rele[r * L + k] = qrow[k];
    }
    in.disc[r] = params.discrimination(pr.exercise);
    ++r;
  }
  return in;
}

inline double clamp_probability(double y) { return std::clamp(y, kProbClamp, 1.0 - kProbClamp); }

/// Rows are evaluated in blocks of this many bindings.
inline constexpr std::size_t kEvalBlock = 512;

/// sigmoid(f) for every input row, clamped into the open unit interval.
inline std::vector<double> predict_inputs(const ExprTree& tree, const BatchInputs& in) {
  std::vector<double> out(in.batch);
  if (in.batch == 0) return out;
  // Blocks keep each column cache-resident on large datasets.
  for (std::size_t lo = 0; lo < in.batch; lo += kEvalBlock) {
    const std::size_t hi = std::min(in.batch, lo + kEvalBlock);
    forward_scores(tree, in, lo, std::span<double>(out).subspan(lo, hi - lo));
  }
  for (auto& y : out) y = clamp_probability(sigmoid(y));
  return out;
}

template <class Pairs>
std::vector<double> predict(const ExprTree& tree, const ModelParams& params, const Pairs& pairs,
                            const QMatrix& q) {
  return predict_inputs(tree, gather_inputs(params, q, pairs));
}

inline std::vector<double> predict(const ExprTree& tree, const ModelParams& params, const ResponseDataset& ds) {
  return predict(tree, params, ds.logs(), ds.qmatrix());
}

/// Summed binary cross-entropy of clamped probabilities.
inline double cross_entropy(std::span<const double> probs, std::span<const ResponseLog> logs) {
  double loss = 0.0;
  for (std::size_t r = 0; r < probs.size(); ++r) {
    const double y = probs[r];
    loss -= logs[r].score ? std::log(y) : std::log(1.0 - y);
  }
  return loss;
}

inline double total_loss(const ExprTree& tree, const ModelParams& params, const ResponseDataset& ds) {
  const auto probs = predict(tree, params, ds);
  const double loss = cross_entropy(probs, ds.logs());
  if (!std::isfinite(loss)) throw TrainingError("non-finite loss for tree " + to_infix(tree));
  return loss;
}

struct LossAndGrads {
  double loss = 0.0;
  RawTensors grads;
};

/// Loss of one batch and its exact gradient with respect to the raw
/// parameters. A clamped probability contributes zero gradient, matching the
/// derivative of the clamped loss.
inline LossAndGrads loss_and_grads(const ExprTree& tree, const ModelParams& params,
                                   std::span<const ResponseLog> batch, const QMatrix& q) {
  if (batch.empty()) throw std::invalid_argument("loss_and_grads: empty batch");
  const BatchInputs in = gather_inputs(params, q, batch);
  Tape tape;
  const auto scores = tape.forward(tree, in);

  LossAndGrads out{0.0, RawTensors::zeros_like(params.raw)};
  std::vector<double> d_scores(in.batch);
  for (std::size_t r = 0; r < in.batch; ++r) {
    const double y_raw = sigmoid(scores[r]);
    const double y = clamp_probability(y_raw);
    const int label = batch[r].score;
    out.loss -= label ? std::log(y) : std::log(1.0 - y);
    // identical to y_raw outside the clamp; zero derivative inside it
    d_scores[r] = (y == y_raw) ? (y_raw - label) : 0.0;
  }
  if (!std::isfinite(out.loss)) throw TrainingError("non-finite loss for tree " + to_infix(tree));

  const TerminalAdjoints adj = tape.backward(d_scores);
  const std::size_t L = in.dims;
  for (std::size_t r = 0; r < in.batch; ++r) {
    const auto s = batch[r].student;
    const auto j = batch[r].exercise;
    for (std::size_t k = 0; k < L; ++k) {
      const double pk = in.p[r * L + k];
      const double dk = in.diff[r * L + k];
      out.grads.p(s, k) += adj.p[r * L + k] * pk * (1.0 - pk);
      out.grads.diff(j, k) += adj.diff[r * L + k] * dk * (1.0 - dk);
    }
    const double sd = sigmoid(params.raw.disc(j, 0));
    out.grads.disc(j, 0) += adj.disc[r] * params.disc_scale * sd * (1.0 - sd);
  }
  return out;
}

struct AdamState {
  double learning_rate = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t step = 0;
  RawTensors m;
  RawTensors v;

  static AdamState fresh(const ModelParams& params, double learning_rate) {
    AdamState s;
    s.learning_rate = learning_rate;
    s.m = RawTensors::zeros_like(params.raw);
    s.v = RawTensors::zeros_like(params.raw);
    return s;
  }
};

/// One bias-corrected Adam update of the raw parameters, in place.
inline void adam_step(AdamState& state, ModelParams& params, const RawTensors& grads) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  auto targets = params.raw.buffers();
  auto ms = state.m.buffers();
  auto vs = state.v.buffers();
  const auto gs = grads.buffers();
  for (std::size_t b = 0; b < targets.size(); ++b) {
    if (!targets[b]->same_shape(*gs[b]) || !ms[b]->same_shape(*gs[b])) {
      throw std::invalid_argument("adam_step: shape mismatch");
    }
    auto theta = targets[b]->values();
    auto m = ms[b]->values();
    auto v = vs[b]->values();
    const auto g = gs[b]->values();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      theta[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

struct PoConfig {
  double learning_rate = 0.002;
  std::size_t batch_size = 256;
  std::size_t inner_epochs = 5;
  std::uint64_t seed = 0;  // mini-batch shuffling
};

/// Continuous optimisation phase: inner_epochs passes of shuffled mini-batch
/// Adam on the summed loss, starting from fresh optimizer moments.
inline ModelParams fit_params(const ExprTree& tree, ModelParams params, const ResponseDataset& train,
                              const PoConfig& cfg) {
  if (cfg.batch_size == 0) throw ConfigError("po.batch_size must be >= 1");
  if (train.size() == 0) return params;
  AdamState adam = AdamState::fresh(params, cfg.learning_rate);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train.size());
  std::vector<ResponseLog> batch;
  batch.reserve(cfg.batch_size);
  const auto logs = train.logs();
  for (std::size_t epoch = 0; epoch < cfg.inner_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size) {
      const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
      batch.clear();
      for (std::size_t t = lo; t < hi; ++t) batch.push_back(logs[order[t]]);
      const auto lg = loss_and_grads(tree, params, batch, train.qmatrix());
      adam_step(adam, params, lg.grads);
    }
  }
  return params;
}

struct MonotonicityReport {
  std::size_t probes = 0;
  std::size_t violations = 0;
  std::size_t skipped = 0;
  double violation_rate = 0.0;
};

/// Probes random (student, exercise, covered attribute) triples: the effective
/// proficiency is raised by `step` (clipped to 1) and a drop of the predicted
/// probability by more than 1e-9 counts as a violation.
inline MonotonicityReport monotonicity_audit(const ExprTree& tree, const ModelParams& params, const QMatrix& q,
                                             std::size_t n_probes, double step, std::uint64_t seed) {
  check_shapes(params, q);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_student(0, params.n_students() - 1);
  std::uniform_int_distribution<std::size_t> pick_exercise(0, params.n_exercises() - 1);
  const std::size_t L = params.n_attributes();
  MonotonicityReport report;
  Bindings b{std::vector<double>(L), std::vector<double>(L), std::vector<double>(L), 0.0};
  std::vector<std::size_t> covered;
  for (std::size_t probe = 0; probe < n_probes; ++probe) {
    const std::size_t s = pick_student(rng);
    const std::size_t j = pick_exercise(rng);
    covered.clear();
    for (std::size_t k = 0; k < L; ++k) {
      if (q.covers(j, k)) covered.push_back(k);
    }
    if (covered.empty()) {
      ++report.skipped;
      continue;
    }
    const std::size_t k = covered[std::uniform_int_distribution<std::size_t>(0, covered.size() - 1)(rng)];
    for (std::size_t a = 0; a < L; ++a) {
      b.p[a] = params.proficiency(s, a);
      b.rele[a] = q.covers(j, a) ? 1.0 : 0.0;
      b.diff[a] = params.difficulty(j, a);
    }
    b.disc = params.discrimination(j);
    const double before = clamp_probability(sigmoid(eval(tree, b)));
    b.p[k] = std::min(1.0, b.p[k] + step);
    const double after = clamp_probability(sigmoid(eval(tree, b)));
    ++report.probes;
    if (after < before - 1e-9) ++report.violations;
  }
  report.violation_rate =
      report.probes ? static_cast<double>(report.violations) / static_cast<double>(report.probes) : 0.0;
  return report;
}

// ---------------------------------------------------------------------------
// Text serialisation:
//   scdm-params 1
//   disc_scale <value>
//   raw_p <rows> <cols>      followed by one line per row
//   raw_diff <rows> <cols>
//   raw_disc <rows> 1
// Values are written with 17 significant digits and round-trip exactly.

inline void write_params(std::ostream& out, const ModelParams& params) {
  out << "scdm-params 1\n";
  out << std::setprecision(17);
  out << "disc_scale " << params.disc_scale << '\n';
  const std::array<std::pair<const char*, const Matrix*>, 3> blocks{
      {{"raw_p", &params.raw.p}, {"raw_diff", &params.raw.diff}, {"raw_disc", &params.raw.disc}}};
  for (const auto& [name, mat] : blocks) {
    out << name << ' ' << mat->rows() << ' ' << mat->cols() << '\n';
    for (std::size_t r = 0; r < mat->rows(); ++r) {
      for (std::size_t c = 0; c < mat->cols(); ++c) {
        if (c) out << ' ';
        out << (*mat)(r, c);
      }
      out << '\n';
    }
  }
}

inline ModelParams read_params(std::istream& in) {
  std::string tag;
  int version = 0;
  if (!(in >> tag >> version) || tag != "scdm-params" || version != 1) {
    throw DataError("params file: missing 'scdm-params 1' header");
  }
  ModelParams params;
  if (!(in >> tag >> params.disc_scale) || tag != "disc_scale") throw DataError("params file: missing disc_scale");
  auto read_block = [&](const char* name) {
    std::size_t rows = 0, cols = 0;
    if (!(in >> tag >> rows >> cols) || tag != name) {
      throw DataError(std::string("params file: missing block ") + name);
    }
    Matrix mat(rows, cols);
    for (auto& v : mat.values()) {
      if (!(in >> v)) throw DataError(std::string("params file: truncated block ") + name);
    }
    return mat;
  };
  params.raw.p = read_block("raw_p");
  params.raw.diff = read_block("raw_diff");
  params.raw.disc = read_block("raw_disc");
  if (params.raw.p.cols() != params.raw.diff.cols() || params.raw.disc.rows() != params.raw.diff.rows() ||
      params.raw.disc.cols() != 1) {
    throw DataError("params file: inconsistent block shapes");
  }
  return params;
}

}  // namespace scdm

#endif  // SCDM_AUTODIFF_HPP

#ifndef SCDM_METRICS_HPP
#define SCDM_METRICS_HPP

// Generalisation metrics (accuracy, AUC, F1) and the degree-of-agreement
// (DOA) interpretability metric.
//
// Conventions:
//   - a probability >= 0.5 predicts a correct answer;
//   - AUC is the Mann-Whitney statistic with midranks (ties count 1/2);
//   - DOA uses strict proficiency order (ties contribute to neither the
//     numerator nor Z) and skips attributes whose normaliser is zero.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "scdm/common.hpp"
#include "scdm/dataset.hpp"

namespace scdm {

class MetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

namespace detail {
inline void check_inputs(std::span<const double> probs, std::span<const double> labels) {
  if (probs.empty()) throw MetricError("metric on empty input");
  if (probs.size() != labels.size()) throw MetricError("probabilities and labels differ in length");
}
}  // namespace detail

inline double accuracy(std::span<const double> probs, std::span<const double> labels) {
  detail::check_inputs(probs, labels);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool predicted = probs[i] >= 0.5;
    hits += predicted == (labels[i] > 0.5) ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(probs.size());
}

/// Area under the ROC curve via midranks. Throws MetricError when the
/// labels hold a single class.
inline double auc(std::span<const double> probs, std::span<const double> labels) {
  detail::check_inputs(probs, labels);
  const std::size_t n = probs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] < probs[b]; });
  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && probs[order[j]] == probs[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] > 0.5) {
        positive_rank_sum += midrank;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) throw MetricError("AUC undefined for single-class labels");
  const double np = static_cast<double>(positives);
  const double u = positive_rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(negatives));
}

/// F1 of the positive class at threshold 0.5; 0 when precision + recall = 0.
inline double f1(std::span<const double> probs, std::span<const double> labels) {
  detail::check_inputs(probs, labels);
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool predicted = probs[i] >= 0.5;
    const bool actual = labels[i] > 0.5;
    tp += predicted && actual;
    fp += predicted && !actual;
    fn += !predicted && actual;
  }
  if (tp == 0) return 0.0;
  const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return 2.0 * precision * recall / (precision + recall);
}

// ---------------------------------------------------------------------------
// DOA

enum class DoaMode : std::uint8_t { exact, sampled };

/// Which co-answered exercises form the per-pair denominator.
enum class DoaConvention : std::uint8_t {
  /// Exercises where the two responses differ; pairs without such an
  /// exercise are left out of Z. Random proficiencies score 0.5.
  discordant,
  /// Every co-answered exercise; Z counts all strictly ordered pairs.
  co_answered,
};

struct DoaOptions {
  DoaMode mode = DoaMode::exact;
  std::size_t n_pairs = 1'000'000;  // sampled mode
  std::uint64_t seed = 0;          // sampled mode
  DoaConvention convention = DoaConvention::discordant;
};

struct DoaResult {
  std::optional<double> mean;                       // over included attributes
  std::vector<std::optional<double>> per_attribute;  // empty = excluded
  std::vector<std::size_t> excluded;
  std::vector<double> pair_weight;                   // Z per attribute
};

inline std::string to_string(DoaConvention c) { return c == DoaConvention::discordant ? "discordant" : "co_answered"; }
inline std::string to_string(DoaMode m) { return m == DoaMode::exact ? "exact" : "sampled"; }

/// Per-attribute degree of agreement between the proficiency order of each
/// student pair and their responses on exercises covering that attribute.
inline DoaResult doa(const Matrix& proficiency, const ResponseDataset& ds, DoaOptions opts = {}) {
  const std::size_t N = ds.n_students();
  const std::size_t M = ds.n_exercises();
  const std::size_t L = ds.n_attributes();
  if (proficiency.rows() != N || proficiency.cols() != L) {
    throw DataError("doa: proficiency matrix shape does not match the dataset");
  }
  // -1 = unanswered
  std::vector<std::int8_t> response(N * M, -1);
  for (const auto& l : ds.logs()) response[l.student * M + l.exercise] = static_cast<std::int8_t>(l.score);

  std::vector<std::pair<std::size_t, std::size_t>> sampled;
  if (opts.mode == DoaMode::sampled && N > 1) {
    std::mt19937_64 rng(opts.seed);
    std::uniform_int_distribution<std::size_t> pick(0, N - 1);
    sampled.reserve(opts.n_pairs);
    while (sampled.size() < opts.n_pairs) {
      const std::size_t a = pick(rng), b = pick(rng);
      if (a != b) sampled.emplace_back(a, b);
    }
  }

  DoaResult result;
  result.per_attribute.assign(L, std::nullopt);
  result.pair_weight.assign(L, 0.0);
  std::vector<std::size_t> covering;
  double sum = 0.0;
  std::size_t included = 0;
  for (std::size_t k = 0; k < L; ++k) {
    covering.clear();
    for (std::size_t j = 0; j < M; ++j) {
      if (ds.qmatrix().covers(j, k)) covering.push_back(j);
    }
    double numerator = 0.0;
    double z = 0.0;
    bool any_evidence = false;
    auto visit = [&](std::size_t a, std::size_t b) {
      if (!(proficiency(a, k) > proficiency(b, k))) return;
      std::size_t agree = 0, denom = 0;
      for (std::size_t j : covering) {
        const auto ra = response[a * M + j];
        const auto rb = response[b * M + j];
        if (ra < 0 || rb < 0) continue;
        if (opts.convention == DoaConvention::discordant && ra == rb) continue;
        ++denom;
        agree += ra > rb ? 1 : 0;
      }
      if (denom == 0) {
        if (opts.convention == DoaConvention::co_answered) z += 1.0;
        return;
      }
      any_evidence = true;
      z += 1.0;
      numerator += static_cast<double>(agree) / static_cast<double>(denom);
    };
    if (opts.mode == DoaMode::exact) {
      for (std::size_t a = 0; a < N; ++a) {
        for (std::size_t b = 0; b < N; ++b) visit(a, b);
      }
    } else {
      for (const auto& [a, b] : sampled) visit(a, b);
    }
    result.pair_weight[k] = z;
    if (z == 0.0 || !any_evidence) {
      result.excluded.push_back(k);
      continue;
    }
    const double value = numerator / z;
    result.per_attribute[k] = value;
    sum += value;
    ++included;
  }
  if (included > 0) result.mean = sum / static_cast<double>(included);
  return result;
}

}  // namespace scdm

#endif  // SCDM_METRICS_HPP

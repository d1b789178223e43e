#ifndef SCDM_DATASET_HPP
#define SCDM_DATASET_HPP

// Response logs, Q-matrices, CSV loading, per-student splitting and the
// synthetic generator used as an acceptance oracle.
//
// On-disk formats (UTF-8, headerless, LF or CRLF, 0-based indices):
//   logs     one "student,exercise,score" triple per line, score in {0,1}
//   Q-matrix one row per exercise, comma-separated 0/1 entries

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "scdm/common.hpp"

namespace scdm {

struct ResponseLog {
  std::size_t student = 0;
  std::size_t exercise = 0;
  int score = 0;

  friend bool operator==(const ResponseLog&, const ResponseLog&) = default;
};

/// Binary exercise-by-attribute relevance matrix; every exercise covers at
/// least one attribute.
class QMatrix {
 public:
  QMatrix() = default;

  QMatrix(std::size_t n_exercises, std::size_t n_attributes, std::vector<std::uint8_t> entries)
      : n_exercises_(n_exercises), n_attributes_(n_attributes), entries_(std::move(entries)) {
    if (n_exercises_ == 0 || n_attributes_ == 0) {
      throw DataError("Q-matrix must have at least one exercise and one attribute");
    }
    if (entries_.size() != n_exercises_ * n_attributes_) {
      throw DataError("Q-matrix entry count does not match its shape");
    }
    for (std::size_t j = 0; j < n_exercises_; ++j) {
      bool any = false;
      for (std::size_t k = 0; k < n_attributes_; ++k) {
        const auto v = entries_[j * n_attributes_ + k];
        if (v > 1) throw DataError("Q-matrix entry is not binary at exercise " + std::to_string(j));
        any = any || v == 1;
      }
      if (!any) throw DataError("Q-matrix exercise " + std::to_string(j) + " covers no attribute");
    }
  }

  std::size_t n_exercises() const { return n_exercises_; }
  std::size_t n_attributes() const { return n_attributes_; }

  bool covers(std::size_t exercise, std::size_t attribute) const {
    return entries_[exercise * n_attributes_ + attribute] != 0;
  }
  std::span<const std::uint8_t> row(std::size_t exercise) const {
    return {entries_.data() + exercise * n_attributes_, n_attributes_};
  }

  friend bool operator==(const QMatrix&, const QMatrix&) = default;

 private:
  std::size_t n_exercises_ = 0;
  std::size_t n_attributes_ = 0;
  std::vector<std::uint8_t> entries_;
};

/// Immutable set of response triplets together with its Q-matrix.
class ResponseDataset {
 public:
  ResponseDataset() = default;

  ResponseDataset(std::vector<ResponseLog> logs, std::size_t n_students, QMatrix q)
      : logs_(std::move(logs)), n_students_(n_students), q_(std::move(q)) {
    if (n_students_ == 0) throw DataError("dataset needs at least one student");
    check_logs(/*allow_empty=*/false);
  }

  /// Subset constructor used by split(); an empty subset is allowed there.
  static ResponseDataset subset(std::vector<ResponseLog> logs, std::size_t n_students, QMatrix q) {
    ResponseDataset ds;
    ds.logs_ = std::move(logs);
    ds.n_students_ = n_students;
    ds.q_ = std::move(q);
    ds.check_logs(/*allow_empty=*/true);
    return ds;
  }

  std::span<const ResponseLog> logs() const { return logs_; }
  std::size_t size() const { return logs_.size(); }
  std::size_t n_students() const { return n_students_; }
  std::size_t n_exercises() const { return q_.n_exercises(); }
  std::size_t n_attributes() const { return q_.n_attributes(); }
  const QMatrix& qmatrix() const { return q_; }

  std::vector<double> labels() const {
    std::vector<double> out;
    out.reserve(logs_.size());
    for (const auto& l : logs_) out.push_back(l.score);
    return out;
  }

  double correct_rate() const {
    if (logs_.empty()) return 0.0;
    std::size_t c = 0;
    for (const auto& l : logs_) c += static_cast<std::size_t>(l.score);
    return static_cast<double>(c) / static_cast<double>(logs_.size());
  }

  friend bool operator==(const ResponseDataset&, const ResponseDataset&) = default;

 private:
  void check_logs(bool allow_empty) const {
    if (!allow_empty && logs_.empty()) throw DataError("dataset needs at least one response log");
    std::vector<std::uint8_t> seen(n_students_ * q_.n_exercises(), 0);
    for (std::size_t i = 0; i < logs_.size(); ++i) {
      const auto& l = logs_[i];
      if (l.student >= n_students_) {
        throw DataError("log " + std::to_string(i) + ": student index " + std::to_string(l.student) +
                        " out of range (N=" + std::to_string(n_students_) + ")");
      }
      if (l.exercise >= q_.n_exercises()) {
        throw DataError("log " + std::to_string(i) + ": exercise index " + std::to_string(l.exercise) +
                        " out of range (M=" + std::to_string(q_.n_exercises()) + ")");
      }
      if (l.score != 0 && l.score != 1) {
        throw DataError("log " + std::to_string(i) + ": score must be 0 or 1");
      }
      auto& s = seen[l.student * q_.n_exercises() + l.exercise];
      if (s) {
        throw DataError("log " + std::to_string(i) + ": duplicate (student, exercise) pair (" +
                        std::to_string(l.student) + ", " + std::to_string(l.exercise) + ")");
      }
      s = 1;
    }
  }

  std::vector<ResponseLog> logs_;
  std::size_t n_students_ = 0;
  QMatrix q_;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

template <class Int>
std::optional<Int> parse_int(std::string_view s) {
  Int v{};
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc{} || ptr != end || s.empty()) return std::nullopt;
  return v;
}

/// Reads a text file into lines, dropping CR and skipping blank lines. Line
/// numbers (1-based) are preserved for error messages.
inline std::vector<std::pair<std::size_t, std::string>> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  std::vector<std::pair<std::size_t, std::string>> lines;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (trim(line).empty()) continue;
    lines.emplace_back(number, line);
  }
  return lines;
}

}  // namespace detail

inline QMatrix load_qmatrix(const std::string& path) {
  const auto lines = detail::read_lines(path);
  if (lines.empty()) throw DataError(path + ": Q-matrix file is empty");
  std::size_t width = 0;
  std::vector<std::uint8_t> entries;
  for (const auto& [number, text] : lines) {
    const auto fields = detail::split_csv(text);
    if (width == 0) width = fields.size();
    if (fields.size() != width) {
      throw DataError(path + ":" + std::to_string(number) + ": ragged row (expected " +
                      std::to_string(width) + " entries, got " + std::to_string(fields.size()) + ")");
    }
    for (auto f : fields) {
      const auto v = detail::parse_int<int>(f);
      if (!v || (*v != 0 && *v != 1)) {
        throw DataError(path + ":" + std::to_string(number) + ": non-binary entry '" + std::string(f) + "'");
      }
      entries.push_back(static_cast<std::uint8_t>(*v));
    }
  }
  try {
    return QMatrix(lines.size(), width, std::move(entries));
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

/// Loads headerless "student,exercise,score" rows. When n_students is not
/// given it is inferred as max(student) + 1.
inline ResponseDataset load_logs(const std::string& path, std::optional<std::size_t> n_students,
                                 const QMatrix& q) {
  const auto lines = detail::read_lines(path);
  std::vector<ResponseLog> logs;
  logs.reserve(lines.size());
  std::size_t max_student = 0;
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& [number, text] : lines) {
    const auto fields = detail::split_csv(text);
    const auto where = path + ":" + std::to_string(number) + ": ";
    if (fields.size() != 3) throw DataError(where + "expected 3 fields (student,exercise,score)");
    const auto s = detail::parse_int<std::size_t>(fields[0]);
    const auto e = detail::parse_int<std::size_t>(fields[1]);
    const auto r = detail::parse_int<int>(fields[2]);
    if (!s || !e || !r) throw DataError(where + "fields must be non-negative integers");
    if (*r != 0 && *r != 1) throw DataError(where + "score must be 0 or 1");
    if (n_students && *s >= *n_students) {
      throw DataError(where + "student index " + std::to_string(*s) + " out of range");
    }
    if (*e >= q.n_exercises()) throw DataError(where + "exercise index " + std::to_string(*e) + " out of range");
    if (!seen.insert({*s, *e}).second) {
      throw DataError(where + "duplicate (student, exercise) pair (" + std::to_string(*s) + ", " +
                      std::to_string(*e) + ")");
    }
    max_student = std::max(max_student, *s);
    logs.push_back({*s, *e, *r});
  }
  if (logs.empty()) throw DataError(path + ": no response logs");
  return ResponseDataset(std::move(logs), n_students.value_or(max_student + 1), q);
}

inline void write_logs(std::ostream& out, const ResponseDataset& ds) {
  for (const auto& l : ds.logs()) out << l.student << ',' << l.exercise << ',' << l.score << '\n';
}

inline void write_qmatrix(std::ostream& out, const QMatrix& q) {
  for (std::size_t j = 0; j < q.n_exercises(); ++j) {
    for (std::size_t k = 0; k < q.n_attributes(); ++k) {
      if (k) out << ',';
      out << (q.covers(j, k) ? 1 : 0);
    }
    out << '\n';
  }
}

struct TrainTestSplit {
  ResponseDataset train;
  ResponseDataset test;
};

/// Per-student stratified split: each student's logs are shuffled with one
/// seeded generator (students visited in index order) and
/// floor(count * test_fraction) of them go to the test side. Both sides keep
/// the original log order.
inline TrainTestSplit split(const ResponseDataset& ds, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw std::invalid_argument("split: test_fraction must lie in (0, 1)");
  }
  std::vector<std::vector<std::size_t>> by_student(ds.n_students());
  const auto logs = ds.logs();
  for (std::size_t i = 0; i < logs.size(); ++i) by_student[logs[i].student].push_back(i);

  std::mt19937_64 rng(seed);
  std::vector<std::uint8_t> in_test(logs.size(), 0);
  for (auto& idx : by_student) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(idx.size()) * test_fraction));
    for (std::size_t t = 0; t < n_test; ++t) in_test[idx[t]] = 1;
  }
  std::vector<ResponseLog> train, test;
  for (std::size_t i = 0; i < logs.size(); ++i) (in_test[i] ? test : train).push_back(logs[i]);
  return {ResponseDataset::subset(std::move(train), ds.n_students(), ds.qmatrix()),
          ResponseDataset::subset(std::move(test), ds.n_students(), ds.qmatrix())};
}

struct SyntheticGroundTruth {
  Matrix true_p;                 // N x L in [0,1]
  Matrix true_diff;              // M x L in [0,1]
  std::vector<double> true_disc; // M, in [0.5, 2.5]
  double bayes_accuracy = 0.0;
};

struct SyntheticData {
  ResponseDataset dataset;
  SyntheticGroundTruth truth;
};

/// Correct-answer probability under the initial interaction function:
/// sigmoid(disc_j * sum_k Q_jk (P_ik - diff_jk)).
inline double generating_probability(const SyntheticGroundTruth& truth, const QMatrix& q,
                                     std::size_t student, std::size_t exercise) {
  double f = 0.0;
  for (std::size_t k = 0; k < q.n_attributes(); ++k) {
    if (q.covers(exercise, k)) f += truth.true_p(student, k) - truth.true_diff(exercise, k);
  }
  return sigmoid(truth.true_disc[exercise] * f);
}

/// Complete response matrix (every student answers every exercise) sampled
/// from the initial interaction function with uniform ground-truth parameters.
inline SyntheticData generate_synthetic(std::size_t n_students, std::size_t n_exercises, std::size_t n_attrs,
                                        double density, std::uint64_t seed) {
  if (n_students == 0 || n_exercises == 0 || n_attrs == 0) {
    throw std::invalid_argument("generate_synthetic: counts must be >= 1");
  }
  if (!(density > 0.0 && density <= 1.0)) {
    throw std::invalid_argument("generate_synthetic: density must lie in (0, 1]");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> disc_dist(0.5, 2.5);

  std::vector<std::uint8_t> q_entries(n_exercises * n_attrs, 0);
  for (std::size_t j = 0; j < n_exercises; ++j) {
    bool any = false;
    while (!any) {
      for (std::size_t k = 0; k < n_attrs; ++k) {
        const bool on = unit(rng) < density;
        q_entries[j * n_attrs + k] = on ? 1 : 0;
        any = any || on;
      }
    }
  }
  QMatrix q(n_exercises, n_attrs, std::move(q_entries));

  SyntheticGroundTruth truth;
  truth.true_p = Matrix(n_students, n_attrs);
  for (auto& v : truth.true_p.values()) v = unit(rng);
  truth.true_diff = Matrix(n_exercises, n_attrs);
  for (auto& v : truth.true_diff.values()) v = unit(rng);
  truth.true_disc.resize(n_exercises);
  for (auto& v : truth.true_disc) v = disc_dist(rng);

  std::vector<ResponseLog> logs;
  logs.reserve(n_students * n_exercises);
  double bayes = 0.0;
  for (std::size_t s = 0; s < n_students; ++s) {
    for (std::size_t j = 0; j < n_exercises; ++j) {
      const double p = generating_probability(truth, q, s, j);
      bayes += std::max(p, 1.0 - p);
      logs.push_back({s, j, unit(rng) < p ? 1 : 0});
    }
  }
  truth.bayes_accuracy = bayes / static_cast<double>(logs.size());
  return {ResponseDataset(std::move(logs), n_students, std::move(q)), std::move(truth)};
}

}  // namespace scdm

#endif  // SCDM_DATASET_HPP

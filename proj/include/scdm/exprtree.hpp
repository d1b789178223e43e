#ifndef SCDM_EXPRTREE_HPP
#define SCDM_EXPRTREE_HPP

// Typed symbolic trees for interaction functions.
//
// A tree is stored as its prefix (pre-order) symbol sequence. Every suffix
// position starts a subtree, children of node i start at i + 1 and at
// subtree_end(i + 1), and iterating the sequence backwards visits children
// before parents.
//
// Structured text format (serialize / parse):
//   tree     := terminal | "(" op tree+ ")"
//   op       := add | sub | mul | inner | tanh | sigmoid
//   terminal := P | rele | diff | disc
// e.g. "(mul (inner rele (sub P diff)) disc)".

#include <array>
#include <cctype>
#include <concepts>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "scdm/common.hpp"

namespace scdm {

enum class Symbol : std::uint8_t {
  add,
  sub,
  mul,
  inner,
  tanh,
  sigmoid,
  proficiency,
  relevance,
  difficulty,
  discrimination,
};

inline constexpr std::array<Symbol, 6> kOperators{Symbol::add,   Symbol::sub,  Symbol::mul,
                                                  Symbol::inner, Symbol::tanh, Symbol::sigmoid};
inline constexpr std::array<Symbol, 4> kTerminals{Symbol::proficiency, Symbol::relevance, Symbol::difficulty,
                                                  Symbol::discrimination};

constexpr int arity(Symbol s) {
  switch (s) {
    case Symbol::add:
    case Symbol::sub:
    case Symbol::mul:
    case Symbol::inner:
      return 2;
    case Symbol::tanh:
    case Symbol::sigmoid:
      return 1;
    default:
      return 0;
  }
}

constexpr bool is_terminal(Symbol s) { return arity(s) == 0; }

/// Identifier used in the structured format.
constexpr std::string_view token(Symbol s) {
  switch (s) {
    case Symbol::add: return "add";
    case Symbol::sub: return "sub";
    case Symbol::mul: return "mul";
    case Symbol::inner: return "inner";
    case Symbol::tanh: return "tanh";
    case Symbol::sigmoid: return "sigmoid";
    case Symbol::proficiency: return "P";
    case Symbol::relevance: return "rele";
    case Symbol::difficulty: return "diff";
    case Symbol::discrimination: return "disc";
  }
  return "?";
}

/// Glyph used by to_infix and the graph export.
constexpr std::string_view glyph(Symbol s) {
  switch (s) {
    case Symbol::add: return "+";
    case Symbol::sub: return "−";
    case Symbol::mul: return "×";
    case Symbol::inner: return "∘";
    default: return token(s);
  }
}

inline std::optional<Symbol> symbol_from_token(std::string_view t) {
  for (Symbol s : kOperators) {
    if (token(s) == t) return s;
  }
  for (Symbol s : kTerminals) {
    if (token(s) == t) return s;
  }
  return std::nullopt;
}

enum class ValueKind : std::uint8_t { scalar, vector };

constexpr ValueKind terminal_kind(Symbol s) {
  return s == Symbol::discrimination ? ValueKind::scalar : ValueKind::vector;
}

/// Immutable, arity-correct prefix tree. Construction rejects sequences that
/// do not form exactly one tree; kind and content constraints are checked
/// separately by validate().
class ExprTree {
 public:
  explicit ExprTree(std::vector<Symbol> prefix) : nodes_(std::move(prefix)) {
    if (nodes_.empty()) throw std::invalid_argument("ExprTree: empty symbol sequence");
    long open = 1;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (open == 0) throw std::invalid_argument("ExprTree: trailing symbols after a complete tree");
      open += arity(nodes_[i]) - 1;
    }
    if (open != 0) throw std::invalid_argument("ExprTree: incomplete tree (missing operands)");
    compute_height();
  }

  std::span<const Symbol> nodes() const { return nodes_; }
  Symbol operator[](std::size_t i) const { return nodes_[i]; }
  std::size_t size() const { return nodes_.size(); }
  int height() const { return height_; }
  Symbol root() const { return nodes_.front(); }

  /// One past the last node of the subtree rooted at i.
  std::size_t subtree_end(std::size_t i) const {
    long open = 1;
    std::size_t j = i;
    while (open > 0) {
      open += arity(nodes_[j]) - 1;
      ++j;
    }
    return j;
  }

  /// Start indices of the children of node i.
  std::array<std::size_t, 2> children(std::size_t i) const {
    const std::size_t left = i + 1;
    return {left, arity(nodes_[i]) == 2 ? subtree_end(left) : left};
  }

  ExprTree subtree(std::size_t i) const {
    return ExprTree(std::vector<Symbol>(nodes_.begin() + static_cast<long>(i),
                                        nodes_.begin() + static_cast<long>(subtree_end(i))));
  }

  /// Copy of this tree with the subtree at i replaced.
  ExprTree replace_subtree(std::size_t i, const ExprTree& replacement) const {
    std::vector<Symbol> out;
    out.reserve(nodes_.size() + replacement.size());
    out.insert(out.end(), nodes_.begin(), nodes_.begin() + static_cast<long>(i));
    out.insert(out.end(), replacement.nodes_.begin(), replacement.nodes_.end());
    out.insert(out.end(), nodes_.begin() + static_cast<long>(subtree_end(i)), nodes_.end());
    return ExprTree(std::move(out));
  }

  bool contains(Symbol s) const {
    for (Symbol n : nodes_) {
      if (n == s) return true;
    }
    return false;
  }

  friend bool operator==(const ExprTree& a, const ExprTree& b) { return a.nodes_ == b.nodes_; }

 private:
  void compute_height() {
    std::vector<int> stack;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      int h = 0;
      for (int c = 0; c < arity(nodes_[i]); ++c) {
        h = std::max(h, stack.back() + 1);
        stack.pop_back();
      }
      stack.push_back(h);
    }
    height_ = stack.back();
  }

  std::vector<Symbol> nodes_;
  int height_ = 0;
};

inline std::size_t count_nodes(const ExprTree& t) { return t.size(); }
inline int height(const ExprTree& t) { return t.height(); }

namespace build {

inline ExprTree leaf(Symbol s) { return ExprTree({s}); }
inline ExprTree P() { return leaf(Symbol::proficiency); }
inline ExprTree rele() { return leaf(Symbol::relevance); }
inline ExprTree diff() { return leaf(Symbol::difficulty); }
inline ExprTree disc() { return leaf(Symbol::discrimination); }

inline ExprTree unary(Symbol op, const ExprTree& a) {
  std::vector<Symbol> v{op};
  v.insert(v.end(), a.nodes().begin(), a.nodes().end());
  return ExprTree(std::move(v));
}
inline ExprTree binary(Symbol op, const ExprTree& a, const ExprTree& b) {
  std::vector<Symbol> v{op};
  v.insert(v.end(), a.nodes().begin(), a.nodes().end());
  v.insert(v.end(), b.nodes().begin(), b.nodes().end());
  return ExprTree(std::move(v));
}

inline ExprTree add(const ExprTree& a, const ExprTree& b) { return binary(Symbol::add, a, b); }
inline ExprTree sub(const ExprTree& a, const ExprTree& b) { return binary(Symbol::sub, a, b); }
inline ExprTree mul(const ExprTree& a, const ExprTree& b) { return binary(Symbol::mul, a, b); }
inline ExprTree inner(const ExprTree& a, const ExprTree& b) { return binary(Symbol::inner, a, b); }
inline ExprTree tanh(const ExprTree& a) { return unary(Symbol::tanh, a); }
inline ExprTree sigmoid(const ExprTree& a) { return unary(Symbol::sigmoid, a); }

}  // namespace build

// ---------------------------------------------------------------------------
// Kind checking and validation

struct KindRules {
  /// Allow Vector (+|-|x) Scalar by broadcasting the scalar.
  bool allow_broadcast = true;
};

enum class ViolationCode : std::uint8_t {
  kind_mismatch,
  non_scalar_output,
  missing_proficiency,
  missing_relevance,
};

struct Violation {
  ViolationCode code;
  std::size_t node = 0;
  std::string detail;
};

struct KindCheckResult {
  std::optional<ValueKind> kind;  // root kind, empty when any violation occurred
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
};

/// Applies the operator kind rules bottom-up and collects every mismatch.
/// A node whose operands already failed is not reported again.
inline KindCheckResult kind_check(const ExprTree& tree, KindRules rules = {}) {
  KindCheckResult result;
  std::vector<std::optional<ValueKind>> stack;
  const auto nodes = tree.nodes();
  for (std::size_t i = nodes.size(); i-- > 0;) {
    const Symbol s = nodes[i];
    if (is_terminal(s)) {
      stack.push_back(terminal_kind(s));
      continue;
    }
    if (arity(s) == 1) {
      // tanh / sigmoid preserve kind
      continue;
    }
    const auto left = stack.back();
    stack.pop_back();
    const auto right = stack.back();
    stack.pop_back();
    if (!left || !right) {
      stack.push_back(std::nullopt);
      continue;
    }
    std::optional<ValueKind> out;
    if (s == Symbol::inner) {
      if (*left == ValueKind::vector && *right == ValueKind::vector) out = ValueKind::scalar;
    } else if (*left == *right) {
      out = *left;
    } else if (rules.allow_broadcast) {
      out = ValueKind::vector;
    }
    if (!out) {
      result.violations.push_back(
          {ViolationCode::kind_mismatch, i,
           std::string(token(s)) + " cannot combine " + (*left == ValueKind::scalar ? "Scalar" : "Vector") +
               " with " + (*right == ValueKind::scalar ? "Scalar" : "Vector")});
    }
    stack.push_back(out);
  }
  if (result.violations.empty()) result.kind = stack.back();
  return result;
}

/// Checks scalar output, presence of P and rele, and kind correctness.
/// Arity is structural in the prefix encoding and holds for every ExprTree.
inline std::vector<Violation> validate(const ExprTree& tree, KindRules rules = {}) {
  auto kc = kind_check(tree, rules);
  auto violations = std::move(kc.violations);
  if (kc.kind && *kc.kind != ValueKind::scalar) {
    violations.push_back({ViolationCode::non_scalar_output, 0, "root yields a Vector"});
  }
  if (!tree.contains(Symbol::proficiency)) {
    violations.push_back({ViolationCode::missing_proficiency, 0, "no P terminal"});
  }
  if (!tree.contains(Symbol::relevance)) {
    violations.push_back({ViolationCode::missing_relevance, 0, "no rele terminal"});
  }
  return violations;
}

inline bool is_valid(const ExprTree& tree, KindRules rules = {}) { return validate(tree, rules).empty(); }

// ---------------------------------------------------------------------------
// Single-binding evaluation

/// Terminal values for one (student, exercise) pair.
template <std::floating_point T>
struct BasicBindings {
  std::vector<T> p;
  std::vector<T> rele;
  std::vector<T> diff;
  T disc{};
};
using Bindings = BasicBindings<double>;

namespace detail {

template <std::floating_point T>
struct KindedValue {
  bool is_vector = false;
  T scalar{};
  std::vector<T> vec;
};

template <std::floating_point T>
T apply_scalar(Symbol op, T a, T b) {
  switch (op) {
    case Symbol::add: return a + b;
    case Symbol::sub: return a - b;
    case Symbol::mul: return a * b;
    default: throw std::logic_error("apply_scalar: not an elementwise binary operator");
  }
}

template <std::floating_point T>
T apply_unary(Symbol op, T a) {
  using std::exp;
  using std::tanh;
  if (op == Symbol::tanh) return tanh(a);
  return T(1) / (T(1) + exp(-a));
}

}  // namespace detail

/// Evaluates f for one binding. Requires validate(tree) to be ok and all
/// binding vectors to share one length.
template <std::floating_point T>
T eval(const ExprTree& tree, const BasicBindings<T>& b, KindRules rules = {}) {
  const std::size_t L = b.p.size();
  if (b.rele.size() != L || b.diff.size() != L) {
    throw std::invalid_argument("eval: binding vectors differ in length");
  }
  using V = detail::KindedValue<T>;
  std::vector<V> stack;
  const auto nodes = tree.nodes();
  for (std::size_t i = nodes.size(); i-- > 0;) {
    const Symbol s = nodes[i];
    switch (s) {
      case Symbol::proficiency: stack.push_back({true, T{}, b.p}); continue;
      case Symbol::relevance: stack.push_back({true, T{}, b.rele}); continue;
      case Symbol::difficulty: stack.push_back({true, T{}, b.diff}); continue;
      case Symbol::discrimination: stack.push_back({false, b.disc, {}}); continue;
      case Symbol::tanh:
      case Symbol::sigmoid: {
        auto& v = stack.back();
        if (v.is_vector) {
          for (auto& x : v.vec) x = detail::apply_unary(s, x);
        } else {
          v.scalar = detail::apply_unary(s, v.scalar);
        }
        continue;
      }
      default: break;
    }
    V left = std::move(stack.back());
    stack.pop_back();
    V right = std::move(stack.back());
    stack.pop_back();
    if (s == Symbol::inner) {
      if (!left.is_vector || !right.is_vector) throw std::invalid_argument("eval: inner needs two vectors");
      T acc{};
      for (std::size_t k = 0; k < L; ++k) acc += left.vec[k] * right.vec[k];
      stack.push_back({false, acc, {}});
      continue;
    }
    if (!left.is_vector && !right.is_vector) {
      stack.push_back({false, detail::apply_scalar(s, left.scalar, right.scalar), {}});
      continue;
    }
    if (left.is_vector != right.is_vector && !rules.allow_broadcast) {
      throw std::invalid_argument("eval: broadcast disabled");
    }
    V out{true, T{}, std::vector<T>(L)};
    for (std::size_t k = 0; k < L; ++k) {
      const T a = left.is_vector ? left.vec[k] : left.scalar;
      const T c = right.is_vector ? right.vec[k] : right.scalar;
      out.vec[k] = detail::apply_scalar(s, a, c);
    }
    stack.push_back(std::move(out));
  }
  if (stack.back().is_vector) throw std::invalid_argument("eval: tree output is not scalar");
  return stack.back().scalar;
}

// ---------------------------------------------------------------------------
// Text forms

inline std::string to_infix(const ExprTree& tree) {
  std::vector<std::string> stack;
  const auto nodes = tree.nodes();
  for (std::size_t i = nodes.size(); i-- > 0;) {
    const Symbol s = nodes[i];
    if (is_terminal(s)) {
      stack.emplace_back(token(s));
    } else if (arity(s) == 1) {
      stack.back() = std::string(token(s)) + "(" + stack.back() + ")";
    } else {
      std::string left = std::move(stack.back());
      stack.pop_back();
      std::string right = std::move(stack.back());
      stack.pop_back();
      stack.push_back("(" + left + " " + std::string(glyph(s)) + " " + right + ")");
    }
  }
  return stack.back();
}

inline std::string serialize(const ExprTree& tree) {
  std::string out;
  std::vector<int> pending;  // operands still owed by each open operator
  for (Symbol s : tree.nodes()) {
    if (!pending.empty()) out += ' ';
    if (is_terminal(s)) {
      out += token(s);
      while (!pending.empty() && --pending.back() == 0) {
        out += ')';
        pending.pop_back();
      }
    } else {
      out += '(';
      out += token(s);
      pending.push_back(arity(s));
    }
  }
  return out;
}

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t position)
      : std::runtime_error(what + " at position " + std::to_string(position)), position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

inline ExprTree parse(std::string_view text) {
  std::size_t pos = 0;
  std::vector<Symbol> out;
  auto skip_ws = [&] {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  };
  auto read_word = [&] {
    const std::size_t start = pos;
    while (pos < text.size() && !std::isspace(static_cast<unsigned char>(text[pos])) && text[pos] != '(' &&
           text[pos] != ')') {
      ++pos;
    }
    return text.substr(start, pos - start);
  };
  // Recursive descent over one tree.
  auto parse_tree = [&](auto&& self) -> void {
    skip_ws();
    if (pos >= text.size()) throw ParseError("unexpected end of input", pos);
    if (text[pos] == ')') throw ParseError("unexpected ')'", pos);
    if (text[pos] != '(') {
      const std::size_t at = pos;
      const auto word = read_word();
      const auto s = symbol_from_token(word);
      if (!s || !is_terminal(*s)) throw ParseError("expected terminal, got '" + std::string(word) + "'", at);
      out.push_back(*s);
      return;
    }
    ++pos;
    skip_ws();
    const std::size_t at = pos;
    const auto word = read_word();
    const auto s = symbol_from_token(word);
    if (!s || is_terminal(*s)) throw ParseError("expected operator, got '" + std::string(word) + "'", at);
    out.push_back(*s);
    for (int c = 0; c < arity(*s); ++c) self(self);
    skip_ws();
    if (pos >= text.size()) throw ParseError("unexpected end of input, expected ')'", pos);
    if (text[pos] != ')') throw ParseError("expected ')'", pos);
    ++pos;
  };
  parse_tree(parse_tree);
  skip_ws();
  if (pos != text.size()) throw ParseError("trailing input", pos);
  return ExprTree(std::move(out));
}

/// Graphviz DOT rendering; one "nK [label=...]" line per node.
inline std::string to_dot(const ExprTree& tree) {
  std::ostringstream out;
  out << "digraph interaction_function {\n";
  const auto nodes = tree.nodes();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    out << "  n" << i << " [label=\"" << glyph(nodes[i]) << "\"];\n";
  }
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const int a = arity(nodes[i]);
    if (a == 0) continue;
    const auto ch = tree.children(i);
    for (int c = 0; c < a; ++c) out << "  n" << i << " -> n" << ch[static_cast<std::size_t>(c)] << ";\n";
  }
  out << "}\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Random generation

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Grow-method generation without constraints: below max_depth each node is
/// drawn uniformly from the full symbol set (the root from operators only when
/// operator_root), at max_depth a terminal is forced.
template <std::uniform_random_bit_generator Rng>
ExprTree grow(Rng& rng, int max_depth, bool operator_root = true) {
  std::vector<Symbol> out;
  std::uniform_int_distribution<std::size_t> any(0, kOperators.size() + kTerminals.size() - 1);
  std::uniform_int_distribution<std::size_t> op_pick(0, kOperators.size() - 1);
  std::uniform_int_distribution<std::size_t> term_pick(0, kTerminals.size() - 1);
  auto pick = [&](int depth) {
    if (depth >= max_depth) return kTerminals[term_pick(rng)];
    if (depth == 0 && operator_root) return kOperators[op_pick(rng)];
    const std::size_t k = any(rng);
    return k < kOperators.size() ? kOperators[k] : kTerminals[k - kOperators.size()];
  };
  auto rec = [&](auto&& self, int depth) -> void {
    const Symbol s = pick(depth);
    out.push_back(s);
    for (int c = 0; c < arity(s); ++c) self(self, depth + 1);
  };
  rec(rec, 0);
  return ExprTree(std::move(out));
}

/// Grow-method generation directed by output kind: every node is drawn
/// uniformly from the symbols able to yield the kind its parent requires, so
/// the result always kind-checks to `want`. Content constraints (P and rele
/// present) are left to the caller.
template <std::uniform_random_bit_generator Rng>
ExprTree grow_kinded(Rng& rng, int max_depth, ValueKind want, KindRules rules = {}) {
  static constexpr std::array<Symbol, 7> scalar_syms{Symbol::discrimination, Symbol::add,  Symbol::sub,
                                                     Symbol::mul,            Symbol::inner, Symbol::tanh,
                                                     Symbol::sigmoid};
  static constexpr std::array<Symbol, 8> vector_syms{Symbol::proficiency, Symbol::relevance, Symbol::difficulty,
                                                     Symbol::add,         Symbol::sub,       Symbol::mul,
                                                     Symbol::tanh,        Symbol::sigmoid};
  static constexpr std::array<Symbol, 3> vector_terms{Symbol::proficiency, Symbol::relevance, Symbol::difficulty};
  std::vector<Symbol> out;
  auto uniform = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  auto rec = [&](auto&& self, int depth, ValueKind kind) -> void {
    Symbol s;
    if (depth >= max_depth) {
      s = kind == ValueKind::scalar ? Symbol::discrimination : vector_terms[uniform(vector_terms.size())];
    } else if (kind == ValueKind::scalar) {
      // The root must be an operator: a lone terminal can never validate.
      const std::size_t first = depth == 0 ? 1 : 0;
      s = scalar_syms[first + uniform(scalar_syms.size() - first)];
    } else {
      const std::size_t first = depth == 0 ? 3 : 0;
      s = vector_syms[first + uniform(vector_syms.size() - first)];
    }
    out.push_back(s);
    switch (arity(s)) {
      case 0:
        return;
      case 1:
        self(self, depth + 1, kind);
        return;
      default:
        break;
    }
    ValueKind left = ValueKind::vector;
    ValueKind right = ValueKind::vector;
    if (s != Symbol::inner && kind == ValueKind::scalar) {
      left = right = ValueKind::scalar;
    } else if (s != Symbol::inner && rules.allow_broadcast) {
      // (V,V), (V,S) or (S,V)
      const std::size_t combo = uniform(3);
      if (combo == 1) right = ValueKind::scalar;
      if (combo == 2) left = ValueKind::scalar;
    }
    self(self, depth + 1, left);
    self(self, depth + 1, right);
  };
  rec(rec, 0, want);
  return ExprTree(std::move(out));
}

struct RandomTreeOptions {
  int retry_limit = 200;
  KindRules rules{};
};

/// Tree of height <= max_depth, resampled until it validates.
template <std::uniform_random_bit_generator Rng>
ExprTree random_tree(int max_depth, Rng& rng, RandomTreeOptions opts = {}) {
  if (max_depth < 2) throw std::invalid_argument("random_tree: max_depth must be >= 2");
  for (int attempt = 0; attempt < opts.retry_limit; ++attempt) {
    ExprTree t = grow_kinded(rng, max_depth, ValueKind::scalar, opts.rules);
    if (is_valid(t, opts.rules)) return t;
  }
  throw GenerationError("random_tree: no valid tree after " + std::to_string(opts.retry_limit) +
                        " attempts (max_depth=" + std::to_string(max_depth) + ")");
}

}  // namespace scdm

#endif  // SCDM_EXPRTREE_HPP

#ifndef SCDM_BATCH_EVAL_HPP
#define SCDM_BATCH_EVAL_HPP

// Column-wise evaluation of a tree over many (student, exercise) bindings at
// once, plus a reverse-mode tape for gradients with respect to the P, diff and
// disc terminals.

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "scdm/exprtree.hpp"

namespace scdm {

/// Gathered terminal values for a batch; vectors are batch x dims row-major.
struct BatchInputs {
  std::size_t batch = 0;
  std::size_t dims = 0;
  std::vector<double> p;
  std::vector<double> rele;
  std::vector<double> diff;
  std::vector<double> disc;
};

namespace detail {

struct Column {
  ValueKind kind = ValueKind::scalar;
  std::vector<double> data;  // batch (scalar) or batch * dims (vector)
};

inline double unary_value(Symbol op, double x) {
  return op == Symbol::tanh ? std::tanh(x) : 1.0 / (1.0 + std::exp(-x));
}

/// out = op(a, b) with broadcasting; out must be sized for its kind.
inline void binary_forward(Symbol op, const Column& a, const Column& b, Column& out, std::size_t batch,
                           std::size_t dims) {
  if (op == Symbol::inner) {
    out.kind = ValueKind::scalar;
    out.data.assign(batch, 0.0);
    for (std::size_t r = 0; r < batch; ++r) {
      double acc = 0.0;
      const double* x = a.data.data() + r * dims;
      const double* y = b.data.data() + r * dims;
      for (std::size_t k = 0; k < dims; ++k) acc += x[k] * y[k];
      out.data[r] = acc;
    }
    return;
  }
  const bool av = a.kind == ValueKind::vector;
  const bool bv = b.kind == ValueKind::vector;
  out.kind = (av || bv) ? ValueKind::vector : ValueKind::scalar;
  const std::size_t width = (av || bv) ? dims : 1;
  out.data.resize(batch * width);
  auto run = [&](auto f) {
    for (std::size_t r = 0; r < batch; ++r) {
      for (std::size_t k = 0; k < width; ++k) {
        const double x = av ? a.data[r * width + k] : a.data[r];
        const double y = bv ? b.data[r * width + k] : b.data[r];
        out.data[r * width + k] = f(x, y);
      }
    }
  };
  switch (op) {
    case Symbol::add: run([](double x, double y) { return x + y; }); break;
    case Symbol::sub: run([](double x, double y) { return x - y; }); break;
    case Symbol::mul: run([](double x, double y) { return x * y; }); break;
    default: throw std::logic_error("binary_forward: unexpected operator");
  }
}

inline void load_terminal(Symbol s, const BatchInputs& in, Column& out) {
  switch (s) {
    case Symbol::proficiency: out = {ValueKind::vector, in.p}; break;
    case Symbol::relevance: out = {ValueKind::vector, in.rele}; break;
    case Symbol::difficulty: out = {ValueKind::vector, in.diff}; break;
    case Symbol::discrimination: out = {ValueKind::scalar, in.disc}; break;
    default: throw std::logic_error("load_terminal: not a terminal");
  }
}

}  // namespace detail

namespace detail {

/// Value slot of the forward stack: terminals point into the inputs, operator
/// results live in `own` (whose capacity is reused between calls).
struct Slot {
  ValueKind kind = ValueKind::scalar;
  const double* ptr = nullptr;
  std::vector<double> own;
};

inline const double* terminal_ptr(Symbol s, const BatchInputs& in, std::size_t lo) {
  switch (s) {
    case Symbol::proficiency: return in.p.data() + lo * in.dims;
    case Symbol::relevance: return in.rele.data() + lo * in.dims;
    case Symbol::difficulty: return in.diff.data() + lo * in.dims;
    case Symbol::discrimination: return in.disc.data() + lo;
    default: throw std::logic_error("terminal_ptr: not a terminal");
  }
}

template <class F>
void broadcast(const Slot& a, const Slot& b, double* out, std::size_t rows, std::size_t dims, F f) {
  const bool av = a.kind == ValueKind::vector;
  const bool bv = b.kind == ValueKind::vector;
  if (!av && !bv) {
    for (std::size_t r = 0; r < rows; ++r) out[r] = f(a.ptr[r], b.ptr[r]);
  } else if (av && bv) {
    for (std::size_t t = 0; t < rows * dims; ++t) out[t] = f(a.ptr[t], b.ptr[t]);
  } else if (av) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t k = 0; k < dims; ++k) out[r * dims + k] = f(a.ptr[r * dims + k], b.ptr[r]);
    }
  } else {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t k = 0; k < dims; ++k) out[r * dims + k] = f(a.ptr[r], b.ptr[r * dims + k]);
    }
  }
}

}  // namespace detail

/// Forward-only evaluation of f over input rows [lo, lo + scores.size()).
/// Uses a value stack so memory is proportional to tree height.
inline void forward_scores(const ExprTree& tree, const BatchInputs& in, std::size_t lo, std::span<double> scores) {
  const std::size_t rows = scores.size();
  const std::size_t dims = in.dims;
  if (lo + rows > in.batch) throw std::invalid_argument("forward_scores: row range out of bounds");
  // Per-thread pool; slots keep their buffers across calls.
  thread_local std::vector<detail::Slot> pool;
  const std::size_t need = static_cast<std::size_t>(tree.height()) + 2;
  if (pool.size() < need) pool.resize(need);
  std::size_t top = 0;  // stack = pool[0, top)
  const auto nodes = tree.nodes();
  for (std::size_t i = nodes.size(); i-- > 0;) {
    const Symbol s = nodes[i];
    if (is_terminal(s)) {
      auto& slot = pool[top++];
      slot.kind = terminal_kind(s);
      slot.ptr = detail::terminal_ptr(s, in, lo);
      continue;
    }
    if (arity(s) == 1) {
      auto& slot = pool[top - 1];
      const std::size_t n = slot.kind == ValueKind::vector ? rows * dims : rows;
      if (slot.ptr != slot.own.data()) {
        slot.own.resize(std::max(slot.own.size(), n));
        std::copy(slot.ptr, slot.ptr + n, slot.own.data());
        slot.ptr = slot.own.data();
      }
      double* x = slot.own.data();
      if (s == Symbol::tanh) {
        for (std::size_t t = 0; t < n; ++t) x[t] = std::tanh(x[t]);
      } else {
        for (std::size_t t = 0; t < n; ++t) x[t] = 1.0 / (1.0 + std::exp(-x[t]));
      }
      continue;
    }
    // left operand on top, right beneath; result replaces the right slot
    // after being computed into the spare slot above the stack.
    auto& a = pool[top - 1];
    auto& b = pool[top - 2];
    auto& out = pool[top];
    if (s == Symbol::inner) {
      out.kind = ValueKind::scalar;
      out.own.resize(std::max(out.own.size(), rows));
      for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t k = 0; k < dims; ++k) acc += a.ptr[r * dims + k] * b.ptr[r * dims + k];
        out.own[r] = acc;
      }
    } else {
      out.kind = (a.kind == ValueKind::vector || b.kind == ValueKind::vector) ? ValueKind::vector : ValueKind::scalar;
      const std::size_t n = out.kind == ValueKind::vector ? rows * dims : rows;
      out.own.resize(std::max(out.own.size(), n));
      double* o = out.own.data();
      switch (s) {
        case Symbol::add: detail::broadcast(a, b, o, rows, dims, [](double x, double y) { return x + y; }); break;
        case Symbol::sub: detail::broadcast(a, b, o, rows, dims, [](double x, double y) { return x - y; }); break;
        case Symbol::mul: detail::broadcast(a, b, o, rows, dims, [](double x, double y) { return x * y; }); break;
        default: throw std::logic_error("forward_scores: unexpected operator");
      }
    }
    out.ptr = out.own.data();
    std::swap(pool[top - 2], pool[top]);
    --top;
  }
  if (pool[0].kind != ValueKind::scalar) throw std::invalid_argument("forward_scores: non-scalar tree");
  std::copy(pool[0].ptr, pool[0].ptr + rows, scores.begin());
}

inline void forward_scores(const ExprTree& tree, const BatchInputs& in, std::span<double> scores) {
  if (scores.size() != in.batch) throw std::invalid_argument("forward_scores: output size mismatch");
  forward_scores(tree, in, 0, scores);
}

/// Adjoints of the loss with respect to each terminal family, per batch row.
struct TerminalAdjoints {
  std::vector<double> p;     // batch x dims
  std::vector<double> diff;  // batch x dims
  std::vector<double> disc;  // batch
};

/// Records every node value of one forward pass so the backward sweep can
/// propagate adjoints from the root scores to the terminals.
class Tape {
 public:
  std::span<const double> forward(const ExprTree& tree, const BatchInputs& in) {
    tree_ = &tree;
    in_ = &in;
    const auto nodes = tree.nodes();
    values_.assign(nodes.size(), {});
    left_.assign(nodes.size(), 0);
    right_.assign(nodes.size(), 0);
    for (std::size_t i = nodes.size(); i-- > 0;) {
      const Symbol s = nodes[i];
      if (is_terminal(s)) {
        detail::load_terminal(s, in, values_[i]);
        continue;
      }
      const auto ch = tree.children(i);
      left_[i] = ch[0];
      right_[i] = ch[1];
      if (arity(s) == 1) {
        values_[i] = values_[ch[0]];
        for (auto& x : values_[i].data) x = detail::unary_value(s, x);
      } else {
        detail::binary_forward(s, values_[ch[0]], values_[ch[1]], values_[i], in.batch, in.dims);
      }
    }
    if (values_[0].kind != ValueKind::scalar) throw std::invalid_argument("Tape: non-scalar tree");
    return values_[0].data;
  }

  /// d_scores[r] = dLoss/df for row r. Requires a prior forward().
  TerminalAdjoints backward(std::span<const double> d_scores) const {
    const std::size_t batch = in_->batch;
    const std::size_t dims = in_->dims;
    const auto nodes = tree_->nodes();
    std::vector<std::vector<double>> adj(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      adj[i].assign(values_[i].data.size(), 0.0);
    }
    std::copy(d_scores.begin(), d_scores.end(), adj[0].begin());

    TerminalAdjoints out{std::vector<double>(batch * dims, 0.0), std::vector<double>(batch * dims, 0.0),
                         std::vector<double>(batch, 0.0)};
    // Prefix order visits every parent before its children.
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const Symbol s = nodes[i];
      const auto& g = adj[i];
      switch (s) {
        case Symbol::proficiency: accumulate(out.p, g); continue;
        case Symbol::difficulty: accumulate(out.diff, g); continue;
        case Symbol::discrimination: accumulate(out.disc, g); continue;
        case Symbol::relevance: continue;
        case Symbol::tanh: {
          const auto& y = values_[i].data;
          auto& ga = adj[left_[i]];
          for (std::size_t t = 0; t < g.size(); ++t) ga[t] += g[t] * (1.0 - y[t] * y[t]);
          continue;
        }
        case Symbol::sigmoid: {
          const auto& y = values_[i].data;
          auto& ga = adj[left_[i]];
          for (std::size_t t = 0; t < g.size(); ++t) ga[t] += g[t] * y[t] * (1.0 - y[t]);
          continue;
        }
        case Symbol::inner: {
          const auto& a = values_[left_[i]].data;
          const auto& b = values_[right_[i]].data;
          auto& ga = adj[left_[i]];
          auto& gb = adj[right_[i]];
          for (std::size_t r = 0; r < batch; ++r) {
            for (std::size_t k = 0; k < dims; ++k) {
              ga[r * dims + k] += g[r] * b[r * dims + k];
              gb[r * dims + k] += g[r] * a[r * dims + k];
            }
          }
          continue;
        }
        default:
          break;
      }
      // add / sub / mul with broadcasting: a scalar operand receives the sum
      // of its row's adjoints.
      const auto& A = values_[left_[i]];
      const auto& B = values_[right_[i]];
      auto& ga = adj[left_[i]];
      auto& gb = adj[right_[i]];
      const bool out_vec = values_[i].kind == ValueKind::vector;
      const std::size_t width = out_vec ? dims : 1;
      const bool av = A.kind == ValueKind::vector;
      const bool bv = B.kind == ValueKind::vector;
      for (std::size_t r = 0; r < batch; ++r) {
        for (std::size_t k = 0; k < width; ++k) {
          const std::size_t o = r * width + k;
          const std::size_t ia = av ? o : r;
          const std::size_t ib = bv ? o : r;
          switch (s) {
            case Symbol::add:
              ga[ia] += g[o];
              gb[ib] += g[o];
              break;
            case Symbol::sub:
              ga[ia] += g[o];
              gb[ib] -= g[o];
              break;
            default:  // mul
              ga[ia] += g[o] * B.data[ib];
              gb[ib] += g[o] * A.data[ia];
              break;
          }
        }
      }
    }
    return out;
  }

 private:
  static void accumulate(std::vector<double>& dst, const std::vector<double>& src) {
    for (std::size_t t = 0; t < src.size(); ++t) dst[t] += src[t];
  }

  const ExprTree* tree_ = nullptr;
  const BatchInputs* in_ = nullptr;
  std::vector<detail::Column> values_;
  std::vector<std::size_t> left_;
  std::vector<std::size_t> right_;
};

}  // namespace scdm

#endif  // SCDM_BATCH_EVAL_HPP

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "srpvqa/tensor.hpp"

namespace srpvqa {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::uint32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Reverse-mode tape.
///
/// Nodes are appended in evaluation order, so the node index is already a
/// topological order and backward is a single reverse sweep. Trainable
/// parameters are bound by address: the tape reads them in place and the
/// gradient is later fetched with grad_of(param).
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::uint32_t)>;

  explicit Tape(bool record_gradients = true) : record_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Tensor value) { return push(std::move(value), nullptr, false, {}); }
  Var leaf(Tensor value, bool requires_grad = true) {
    return push(std::move(value), nullptr, requires_grad && record_, {});
  }

  // Binds an externally owned parameter. Repeated binds return the same node.
  Var bind(const Tensor& param) {
    if (auto it = bound_.find(&param); it != bound_.end()) return Var(this, it->second);
    Var v = push(Tensor(), &param, record_, {});
    bound_.emplace(&param, v.id());
    return v;
  }

  // Records the result of an op. `backward` is dropped when no input needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
    bool needs = false;
    for (const Var& in : inputs) needs = needs || requires_grad(in.id());
    return push(std::move(value), nullptr, needs, needs ? std::move(backward) : Backward{});
  }

  const Tensor& value(std::uint32_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }

  // Gradient accumulator for node `id`, zero-initialized on first touch.
  Tensor& grad_accumulator(std::uint32_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = Tensor(value(id).shape());
      n.has_grad = true;
    }
    return n.grad;
  }

  const Tensor* grad(std::uint32_t id) const {
    const Node& n = nodes_[id];
    return n.has_grad ? &n.grad : nullptr;
  }

  const Tensor* grad_of(const Tensor& param) const {
    auto it = bound_.find(&param);
    return it == bound_.end() ? nullptr : grad(it->second);
  }

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse.
  void backward(Var loss) {
    if (&loss.tape() != this) throw std::invalid_argument("backward: loss belongs to another tape");
    if (value(loss.id()).size() != 1) {
      throw DimensionError("backward: loss must be scalar, got " + shape_string(value(loss.id()).shape()));
    }
    if (!requires_grad(loss.id())) return;
    grad_accumulator(loss.id())[0] += 1.0;
    for (std::uint32_t id = loss.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.backward || !n.has_grad) continue;
      n.backward(*this, id);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Tensor value, const Tensor* external, bool requires_grad, Backward backward) {
    if (!external && !value.all_finite()) throw NumericError("non-finite value produced on tape");
    nodes_.push_back(Node{std::move(value), external, Tensor(), false, requires_grad, std::move(backward)});
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
  }

  bool record_;
  std::deque<Node> nodes_;
  std::unordered_map<const Tensor*, std::uint32_t> bound_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

namespace ops {

namespace detail {

inline void require_same_tape(const Var& a, const Var& b, const char* op) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument(std::string(op) + ": operands on different tapes");
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

inline void accumulate(Tape& t, const Var& v, const Tensor& g, double scale = 1.0) {
  if (!v.requires_grad()) return;
  Tensor& acc = t.grad_accumulator(v.id());
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += scale * g[i];
}

}  // namespace detail

inline Var add(Var a, Var b) {
  detail::require_same_tape(a, b, "add");
  detail::require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, std::uint32_t self) {
    const Tensor& g = *t.grad(self);
    detail::accumulate(t, a, g);
    detail::accumulate(t, b, g);
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_tape(a, b, "sub");
  detail::require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, std::uint32_t self) {
    const Tensor& g = *t.grad(self);
    detail::accumulate(t, a, g);
    detail::accumulate(t, b, g, -1.0);
  });
}

// Elementwise product.
inline Var mul(Var a, Var b) {
  detail::require_same_tape(a, b, "mul");
  detail::require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, std::uint32_t self) {
    const Tensor& g = *t.grad(self);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (a.requires_grad()) {
      Tensor& ga = t.grad_accumulator(a.id());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (b.requires_grad()) {
      Tensor& gb = t.grad_accumulator(b.id());
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

inline Var scale(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= s;
  return a.tape().record(std::move(out), {a}, [a, s](Tape& t, std::uint32_t self) {
    detail::accumulate(t, a, *t.grad(self), s);
  });
}

// a[m x n] + bias broadcast over rows; bias holds n values (any rank).
inline Var add_row(Var a, Var bias) {
  detail::require_same_tape(a, bias, "add_row");
  const std::size_t m = a.rows(), n = a.cols();
  if (bias.value().size() != n) {
    throw DimensionError("add_row: bias of " + std::to_string(bias.value().size()) + " values for " +
                         std::to_string(n) + " columns");
  }
  Tensor out = a.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) += bias.value()[j];
  return a.tape().record(std::move(out), {a, bias}, [a, bias, m, n](Tape& t, std::uint32_t self) {
    const Tensor& g = *t.grad(self);
    detail::accumulate(t, a, g);
    if (bias.requires_grad()) {
      Tensor& gb = t.grad_accumulator(bias.id());
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
    }
  });
}

inline Var matmul(Var a, Var b) {
  detail::require_same_tape(a, b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  Tensor out = Tensor::zeros(m, n);
  kernels::gemm_nn(a.value().data(), b.value().data(), out.data(), m, k, n, false);
  return a.tape().record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, std::uint32_t self) {
    const Tensor& g = *t.grad(self);
    if (a.requires_grad()) {
      // dA = dC B^T
      kernels::gemm_nt(g.data(), b.value().data(), t.grad_accumulator(a.id()).data(), m, n, k, true);
    }
    if (b.requires_grad()) {
      // dB = A^T dC
      kernels::gemm_tn(a.value().data(), g.data(), t.grad_accumulator(b.id()).data(), m, k, n, true);
    }
  });
}

inline Var transpose(Var a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = Tensor::zeros(n, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(j, i) = a.value()(i, j);
  return a.tape().record(std::move(out), {a}, [a, m, n](Tape& t, std::uint32_t self) {
    const Tensor& g = *t.grad(self);
    Tensor& ga = t.grad_accumulator(a.id());
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
  });
}

inline Var relu(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return a.tape().record(std::move(out), {a}, [a](Tape& t, std::uint32_t self) {
    const Tensor& g = *t.grad(self);
    const Tensor& x = a.value();
    Tensor& ga = t.grad_accumulator(a.id());
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) ga[i] += g[i];
  });
}

/// Softmax along `axis` of a rank-1 or rank-2 tensor (axis 0 of a vector is its only axis).
/// Each slice is shifted by its max before exponentiation.
inline Var softmax(Var a, std::size_t axis = 1) {
  const Tensor& x = a.value();
  std::size_t outer, inner, stride_slice, stride_elem;
  if (x.rank() <= 1) {
    if (axis != 0 && axis != 1) throw DimensionError("softmax: bad axis for vector");
    outer = 1;
    inner = x.size();
    stride_slice = 0;
    stride_elem = 1;
  } else if (x.rank() == 2 && axis == 1) {
    outer = x.rows();
    inner = x.cols();
    stride_slice = x.cols();
    stride_elem = 1;
  } else if (x.rank() == 2 && axis == 0) {
    outer = x.cols();
    inner = x.rows();
    stride_slice = 1;
    stride_elem = x.cols();
  } else {
    throw DimensionError("softmax: unsupported rank/axis");
  }
  Tensor out = x;
  for (std::size_t o = 0; o < outer; ++o) {
    const std::size_t base = o * stride_slice;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < inner; ++i) mx = std::max(mx, x[base + i * stride_elem]);
    double sum = 0.0;
    for (std::size_t i = 0; i < inner; ++i) {
      double e = std::exp(x[base + i * stride_elem] - mx);
      out[base + i * stride_elem] = e;
      sum += e;
    }
    for (std::size_t i = 0; i < inner; ++i) out[base + i * stride_elem] /= sum;
  }
  return a.tape().record(std::move(out), {a},
                         [a, outer, inner, stride_slice, stride_elem](Tape& t, std::uint32_t self) {
                           const Tensor& g = *t.grad(self);
                           const Tensor& y = t.value(self);
                           Tensor& ga = t.grad_accumulator(a.id());
                           for (std::size_t o = 0; o < outer; ++o) {
                             const std::size_t base = o * stride_slice;
                             double dot = 0.0;
                             for (std::size_t i = 0; i < inner; ++i) {
                               const std::size_t k = base + i * stride_elem;
                               dot += g[k] * y[k];
                             }
                             for (std::size_t i = 0; i < inner; ++i) {
                               const std::size_t k = base + i * stride_elem;
                               ga[k] += y[k] * (g[k] - dot);
                             }
                           }
                         });
}

/// Row-wise layer normalization with learned gain and bias (each of cols() values).
inline Var layer_norm(Var a, Var gain, Var bias, double eps = 1e-6) {
  const std::size_t m = a.rows(), n = a.cols();
  if (gain.value().size() != n || bias.value().size() != n) throw DimensionError("layer_norm: parameter width");
  const Tensor& x = a.value();
  Tensor normed = Tensor::zeros(m, n);
  std::vector<double> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += x(i, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) normed(i, j) = (x(i, j) - mean) * inv_std[i];
  }
  Tensor out = normed;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) = normed(i, j) * gain.value()[j] + bias.value()[j];
  out = Tensor(a.shape(), std::move(out.storage()));
  return a.tape().record(
      std::move(out), {a, gain, bias},
      [a, gain, bias, m, n, normed = std::move(normed), inv_std = std::move(inv_std)](Tape& t, std::uint32_t self) {
        const Tensor& g = *t.grad(self);
        if (gain.requires_grad()) {
          Tensor& gg = t.grad_accumulator(gain.id());
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * normed(i, j);
        }
        if (bias.requires_grad()) {
          Tensor& gb = t.grad_accumulator(bias.id());
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
        }
        if (a.requires_grad()) {
          Tensor& ga = t.grad_accumulator(a.id());
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t i = 0; i < m; ++i) {
            double sum_dy = 0.0, sum_dy_x = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double dy = g[i * n + j] * gain.value()[j];
              sum_dy += dy;
              sum_dy_x += dy * normed(i, j);
            }
            for (std::size_t j = 0; j < n; ++j) {
              const double dy = g[i * n + j] * gain.value()[j];
              ga[i * n + j] += inv_std[i] * (dy - inv_n * sum_dy - normed(i, j) * inv_n * sum_dy_x);
            }
          }
        }
      });
}

// Horizontal concatenation of matrices with equal row counts.
inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no operands");
  const std::size_t m = parts.front().rows();
  std::size_t total = 0;
  for (const Var& p : parts) {
    detail::require_same_tape(parts.front(), p, "concat_cols");
    if (p.rows() != m) throw DimensionError("concat_cols: row counts differ");
    total += p.cols();
  }
  Tensor out = Tensor::zeros(m, total);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) out(i, off + j) = p.value()(i, j);
    off += w;
  }
  Tape& tape = parts.front().tape();
  Var anchor = parts.front();
  for (const Var& p : parts)
    if (p.requires_grad()) anchor = p;
  // record() inspects only the listed inputs; list one that needs a gradient when any does.
  return tape.record(std::move(out), {anchor}, [parts, m, total](Tape& t, std::uint32_t self) {
    const Tensor& g = *t.grad(self);
    std::size_t off = 0;
    for (const Var& p : parts) {
      const std::size_t w = p.cols();
      if (p.requires_grad()) {
        Tensor& gp = t.grad_accumulator(p.id());
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * total + off + j];
      }
      off += w;
    }
  });
}

// Vertical concatenation of matrices with equal column counts.
inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no operands");
  const std::size_t n = parts.front().cols();
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.cols() != n) throw DimensionError("concat_rows: column counts differ");
    total += p.rows();
  }
  std::vector<double> data;
  data.reserve(total * n);
  for (const Var& p : parts) data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  Var anchor = parts.front();
  for (const Var& p : parts)
    if (p.requires_grad()) anchor = p;
  return parts.front().tape().record(Tensor(Shape{total, n}, std::move(data)), {anchor},
                                     [parts](Tape& t, std::uint32_t self) {
                                       const Tensor& g = *t.grad(self);
                                       std::size_t off = 0;
                                       for (const Var& p : parts) {
                                         const std::size_t sz = p.value().size();
                                         if (p.requires_grad()) {
                                           Tensor& gp = t.grad_accumulator(p.id());
                                           for (std::size_t i = 0; i < sz; ++i) gp[i] += g[off + i];
                                         }
                                         off += sz;
                                       }
                                     });
}

inline Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  const std::size_t m = a.rows(), n = a.cols();
  if (begin + count > n) throw DimensionError("slice_cols: range exceeds width");
  Tensor out = Tensor::zeros(m, count);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = a.value()(i, begin + j);
  return a.tape().record(std::move(out), {a}, [a, m, n, begin, count](Tape& t, std::uint32_t self) {
    const Tensor& g = *t.grad(self);
    Tensor& ga = t.grad_accumulator(a.id());
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < count; ++j) ga[i * n + begin + j] += g[i * count + j];
  });
}

// Column means as a 1 x n row.
inline Var mean_rows(Var a) {
  const std::size_t m = a.rows(), n = a.cols();
  if (m == 0) throw DimensionError("mean_rows: no rows");
  Tensor out = Tensor::zeros(1, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += a.value()(i, j);
  const double inv = 1.0 / static_cast<double>(m);
  for (double& v : out.data()) v *= inv;
  return a.tape().record(std::move(out), {a}, [a, m, n, inv](Tape& t, std::uint32_t self) {
    const Tensor& g = *t.grad(self);
    Tensor& ga = t.grad_accumulator(a.id());
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j] * inv;
  });
}

// Tiles a single row m times.
inline Var repeat_rows(Var a, std::size_t m) {
  if (a.rows() != 1) throw DimensionError("repeat_rows: expects a single row");
  const std::size_t n = a.cols();
  Tensor out = Tensor::zeros(m, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) = a.value()[j];
  return a.tape().record(std::move(out), {a}, [a, m, n](Tape& t, std::uint32_t self) {
    const Tensor& g = *t.grad(self);
    Tensor& ga = t.grad_accumulator(a.id());
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[j] += g[i * n + j];
  });
}

// Reinterprets the values under a new shape of equal size.
inline Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape().record(std::move(out), {a}, [a](Tape& t, std::uint32_t self) {
    detail::accumulate(t, a, *t.grad(self));
  });
}

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape().record(Tensor::scalar(s), {a}, [a](Tape& t, std::uint32_t self) {
    const double g = (*t.grad(self))[0];
    Tensor& ga = t.grad_accumulator(a.id());
    for (double& v : ga.data()) v += g;
  });
}

// Rows of `table` selected by `ids`, stacked.
inline Var gather_rows(Var table, std::vector<std::size_t> ids) {
  const std::size_t n = table.cols();
  Tensor out = Tensor::zeros(ids.size(), n);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= table.rows()) throw DimensionError("gather_rows: index out of range");
    for (std::size_t j = 0; j < n; ++j) out(i, j) = table.value()(ids[i], j);
  }
  return table.tape().record(std::move(out), {table}, [table, ids = std::move(ids), n](Tape& t, std::uint32_t self) {
    const Tensor& g = *t.grad(self);
    Tensor& gt = t.grad_accumulator(table.id());
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < n; ++j) gt[ids[i] * n + j] += g[i * n + j];
  });
}

/// -log softmax(logits)[target], computed with a log-sum-exp shift.
inline Var cross_entropy(Var logits, std::size_t target) {
  const Tensor& z = logits.value();
  if (target >= z.size()) {
    throw std::out_of_range("cross_entropy: target " + std::to_string(target) + " outside " +
                            std::to_string(z.size()) + " classes");
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : z.data()) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : z.data()) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  return logits.tape().record(Tensor::scalar(lse - z[target]), {logits},
                              [logits, target, mx, sum](Tape& t, std::uint32_t self) {
                                const double g = (*t.grad(self))[0];
                                const Tensor& zz = logits.value();
                                Tensor& gz = t.grad_accumulator(logits.id());
                                for (std::size_t i = 0; i < zz.size(); ++i) {
                                  const double p = std::exp(zz[i] - mx) / sum;
                                  gz[i] += g * (p - (i == target ? 1.0 : 0.0));
                                }
                              });
}

}  // namespace ops
}  // namespace srpvqa

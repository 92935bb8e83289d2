#pragma once

// Reverse-mode differentiation over rank-2 tensors.
//
// A Var is a handle on a node of the computation graph. Every op below
// evaluates eagerly and, when gradient recording is enabled and some input
// requires a gradient, attaches a closure that accumulates into its inputs.

#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mag/tensor.hpp"

namespace mag {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::string name;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer() {
    if (grad.shape() != value.shape()) grad = Tensor::zeros_like(value);
    return grad;
  }
  bool has_grad() const { return grad.shape() == value.shape(); }
};

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables graph recording for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var constant(Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    return Var(std::move(n));
  }
  static Var parameter(Tensor t, std::string name = {}) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    n->requires_grad = true;
    n->name = std::move(name);
    return Var(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad_buffer(); }
  Tensor& mutable_grad() { return node_->grad_buffer(); }
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& name() const { return node_->name; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  double item() const { return node_->value[0]; }
  void zero_grad() {
    if (node_->has_grad()) node_->grad.fill(0.0);
  }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

inline Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& v : inputs) any = any || v.requires_grad();
    if (any) {
      n->requires_grad = true;
      n->parents.reserve(inputs.size());
      for (auto& v : inputs) n->parents.push_back(v.node_ptr());
      n->backward = std::move(backward);
    }
  }
  return Var(std::move(n));
}

inline Tensor* grad_of(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? &p.grad_buffer() : nullptr;
}

inline void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected rank-2 operand, got " + shape_str(t.shape()));
}

enum class Broadcast { kSame, kRow, kCol, kScalar };

inline Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  require_rank2(a, op);
  require_rank2(b, op);
  if (b.rows() == 1 && b.cols() == 1) return Broadcast::kScalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::kRow;
  if (b.cols() == 1 && b.rows() == a.rows()) return Broadcast::kCol;
  throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(b.shape()) + " onto " +
                       shape_str(a.shape()));
}

inline std::size_t bindex(Broadcast k, std::size_t r, std::size_t c, std::size_t cols) {
  switch (k) {
    case Broadcast::kSame: return r * cols + c;
    case Broadcast::kRow: return c;
    case Broadcast::kCol: return r;
    case Broadcast::kScalar: return 0;
  }
  return 0;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(const Var& a, const Var& b) {
  detail::require_rank2(a.value(), "matmul");
  detail::require_rank2(b.value(), "matmul");
  if (a.cols() != b.rows())
    throw DimensionError("matmul: lhs " + shape_str(a.shape()) + " incompatible with rhs " + shape_str(b.shape()));
  Tensor out({a.rows(), b.cols()});
  out.mat().noalias() = a.value().mat() * b.value().mat();
  return detail::make_result(std::move(out), {a, b}, [](Node& self) {
    const Tensor& A = self.parents[0]->value;
    const Tensor& B = self.parents[1]->value;
    if (auto* ga = detail::grad_of(self, 0)) ga->mat().noalias() += self.grad.mat() * B.mat().transpose();
    if (auto* gb = detail::grad_of(self, 1)) gb->mat().noalias() += A.mat().transpose() * self.grad.mat();
  });
}

inline Var transpose(const Var& a) {
  detail::require_rank2(a.value(), "transpose");
  Tensor out({a.cols(), a.rows()});
  out.mat() = a.value().mat().transpose();
  return detail::make_result(std::move(out), {a}, [](Node& self) {
    if (auto* ga = detail::grad_of(self, 0)) ga->mat() += self.grad.mat().transpose();
  });
}

inline Var reshape(const Var& a, Shape s) {
  Tensor out = a.value().reshaped(std::move(s));
  return detail::make_result(std::move(out), {a}, [](Node& self) {
    if (auto* ga = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic. The right operand may broadcast as a 1xC row,
// an Rx1 column or a 1x1 scalar.

inline Var add(const Var& a, const Var& b) {
  const auto kind = detail::broadcast_kind(a.value(), b.value(), "add");
  Tensor out = a.value();
  const std::size_t C = out.cols();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < C; ++c) out[r * C + c] += b.value()[detail::bindex(kind, r, c, C)];
  return detail::make_result(std::move(out), {a, b}, [kind](Node& self) {
    const std::size_t C = self.value.cols();
    if (auto* ga = detail::grad_of(self, 0)) *ga += self.grad;
    if (auto* gb = detail::grad_of(self, 1))
      for (std::size_t r = 0; r < self.value.rows(); ++r)
        for (std::size_t c = 0; c < C; ++c) (*gb)[detail::bindex(kind, r, c, C)] += self.grad[r * C + c];
  });
}

inline Var mul(const Var& a, const Var& b) {
  const auto kind = detail::broadcast_kind(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const std::size_t C = out.cols();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < C; ++c) out[r * C + c] *= b.value()[detail::bindex(kind, r, c, C)];
  return detail::make_result(std::move(out), {a, b}, [kind](Node& self) {
    const Tensor& A = self.parents[0]->value;
    const Tensor& B = self.parents[1]->value;
    const std::size_t C = self.value.cols();
    auto* ga = detail::grad_of(self, 0);
    auto* gb = detail::grad_of(self, 1);
    for (std::size_t r = 0; r < self.value.rows(); ++r)
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t i = r * C + c;
        const std::size_t j = detail::bindex(kind, r, c, C);
        if (ga) (*ga)[i] += self.grad[i] * B[j];
        if (gb) (*gb)[j] += self.grad[i] * A[i];
      }
  });
}

inline Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.values()) v *= s;
  return detail::make_result(std::move(out), {a}, [s](Node& self) {
    if (auto* ga = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += s * self.grad[i];
  });
}

inline Var sub(const Var& a, const Var& b) { return add(a, scale(b, -1.0)); }

inline Var relu(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  return detail::make_result(std::move(out), {a}, [](Node& self) {
    if (auto* ga = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < ga->size(); ++i)
        if (self.parents[0]->value[i] > 0.0) (*ga)[i] += self.grad[i];
  });
}

/// Blocks gradient flow; the value passes through unchanged.
inline Var detach(const Var& a) { return Var::constant(a.value()); }

// ---------------------------------------------------------------------------
// Normalisation

namespace detail {
inline Var softmax_rows(const Var& x) {
  require_rank2(x.value(), "softmax");
  Tensor out = x.value();
  const std::size_t C = out.cols();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const double m = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (auto& v : row) z += (v = std::exp(v - m));
    for (auto& v : row) v /= z;
  }
  return make_result(std::move(out), {x}, [C](Node& self) {
    auto* gx = grad_of(self, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < self.value.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < C; ++c) dot += self.grad(r, c) * self.value(r, c);
      for (std::size_t c = 0; c < C; ++c) (*gx)(r, c) += self.value(r, c) * (self.grad(r, c) - dot);
    }
  });
}
}  // namespace detail

/// Softmax along `axis` (0: down columns, 1: along rows).
inline Var softmax(const Var& x, int axis = 1) {
  if (axis == 1) return detail::softmax_rows(x);
  if (axis == 0) return transpose(detail::softmax_rows(transpose(x)));
  throw DimensionError("softmax: axis must be 0 or 1");
}

inline Var log_softmax(const Var& x) {
  detail::require_rank2(x.value(), "log_softmax");
  Tensor out = x.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const double m = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - m);
    const double lz = m + std::log(z);
    for (auto& v : row) v -= lz;
  }
  return detail::make_result(std::move(out), {x}, [](Node& self) {
    auto* gx = detail::grad_of(self, 0);
    if (!gx) return;
    const std::size_t C = self.value.cols();
    for (std::size_t r = 0; r < self.value.rows(); ++r) {
      double gs = 0.0;
      for (std::size_t c = 0; c < C; ++c) gs += self.grad(r, c);
      for (std::size_t c = 0; c < C; ++c) (*gx)(r, c) += self.grad(r, c) - std::exp(self.value(r, c)) * gs;
    }
  });
}

/// Row-wise standardisation to zero mean and unit variance (no affine).
inline Var layer_norm(const Var& x, double eps = 1e-5) {
  detail::require_rank2(x.value(), "layer_norm");
  Tensor out = x.value();
  const std::size_t C = out.cols();
  std::vector<double> inv_std(out.rows());
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    double mu = 0.0;
    for (double v : row) mu += v;
    mu /= static_cast<double>(C);
    double var = 0.0;
    for (double v : row) var += (v - mu) * (v - mu);
    var /= static_cast<double>(C);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (auto& v : row) v = (v - mu) * inv_std[r];
  }
  return detail::make_result(std::move(out), {x}, [inv_std = std::move(inv_std), C](Node& self) {
    auto* gx = detail::grad_of(self, 0);
    if (!gx) return;
    const double n = static_cast<double>(C);
    for (std::size_t r = 0; r < self.value.rows(); ++r) {
      double gm = 0.0, gy = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        gm += self.grad(r, c);
        gy += self.grad(r, c) * self.value(r, c);
      }
      gm /= n;
      gy /= n;
      for (std::size_t c = 0; c < C; ++c)
        (*gx)(r, c) += inv_std[r] * (self.grad(r, c) - gm - self.value(r, c) * gy);
    }
  });
}

/// Scales each row to unit Euclidean norm.
inline Var l2_normalize_rows(const Var& x, double eps = 1e-12) {
  detail::require_rank2(x.value(), "l2_normalize_rows");
  Tensor out = x.value();
  std::vector<double> norms(out.rows());
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    double s = 0.0;
    for (double v : row) s += v * v;
    norms[r] = std::max(std::sqrt(s), eps);
    for (auto& v : row) v /= norms[r];
  }
  return detail::make_result(std::move(out), {x}, [norms = std::move(norms), eps](Node& self) {
    auto* gx = detail::grad_of(self, 0);
    if (!gx) return;
    const std::size_t C = self.value.cols();
    for (std::size_t r = 0; r < self.value.rows(); ++r) {
      if (norms[r] <= eps) {
        for (std::size_t c = 0; c < C; ++c) (*gx)(r, c) += self.grad(r, c) / norms[r];
        continue;
      }
      double dot = 0.0;
      for (std::size_t c = 0; c < C; ++c) dot += self.grad(r, c) * self.value(r, c);
      for (std::size_t c = 0; c < C; ++c)
        (*gx)(r, c) += (self.grad(r, c) - self.value(r, c) * dot) / norms[r];
    }
  });
}

// ---------------------------------------------------------------------------
// Indexing and layout

/// Embedding lookup: out[i] = x[index[i]]. Backward scatter-adds.
inline Var gather_rows(const Var& x, std::vector<std::size_t> index) {
  detail::require_rank2(x.value(), "gather_rows");
  const std::size_t C = x.cols();
  Tensor out({index.size(), C});
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= x.rows())
      throw DimensionError("gather_rows: index " + std::to_string(index[i]) + " out of range for " +
                           shape_str(x.shape()));
    std::copy_n(x.value().data() + index[i] * C, C, out.data() + i * C);
  }
  return detail::make_result(std::move(out), {x}, [index = std::move(index), C](Node& self) {
    if (auto* gx = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < index.size(); ++i)
        for (std::size_t c = 0; c < C; ++c) (*gx)(index[i], c) += self.grad(i, c);
  });
}

inline Var slice_rows(const Var& x, std::size_t start, std::size_t count) {
  detail::require_rank2(x.value(), "slice_rows");
  if (start + count > x.rows()) throw DimensionError("slice_rows: range exceeds " + shape_str(x.shape()));
  const std::size_t C = x.cols();
  Tensor out({count, C});
  std::copy_n(x.value().data() + start * C, count * C, out.data());
  return detail::make_result(std::move(out), {x}, [start, count, C](Node& self) {
    if (auto* gx = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < count * C; ++i) (*gx)[start * C + i] += self.grad[i];
  });
}

inline Var slice_cols(const Var& x, std::size_t start, std::size_t count) {
  detail::require_rank2(x.value(), "slice_cols");
  if (start + count > x.cols()) throw DimensionError("slice_cols: range exceeds " + shape_str(x.shape()));
  const std::size_t R = x.rows();
  Tensor out({R, count});
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = x.value()(r, start + c);
  return detail::make_result(std::move(out), {x}, [start, count](Node& self) {
    if (auto* gx = detail::grad_of(self, 0))
      for (std::size_t r = 0; r < self.value.rows(); ++r)
        for (std::size_t c = 0; c < count; ++c) (*gx)(r, start + c) += self.grad(r, c);
  });
}

/// Concatenation along axis 0 (stack rows) or axis 1 (join columns).
inline Var concat(const std::vector<Var>& xs, int axis) {
  if (xs.empty()) throw DimensionError("concat: no operands");
  for (const auto& x : xs) detail::require_rank2(x.value(), "concat");
  if (axis == 0) {
    const std::size_t C = xs[0].cols();
    std::size_t R = 0;
    for (const auto& x : xs) {
      if (x.cols() != C)
        throw DimensionError("concat(axis=0): " + shape_str(x.shape()) + " vs " + shape_str(xs[0].shape()));
      R += x.rows();
    }
    Tensor out({R, C});
    std::size_t off = 0;
    for (const auto& x : xs) {
      std::copy_n(x.value().data(), x.value().size(), out.data() + off);
      off += x.value().size();
    }
    return detail::make_result(std::move(out), xs, [](Node& self) {
      std::size_t off = 0;
      for (std::size_t k = 0; k < self.parents.size(); ++k) {
        const std::size_t n = self.parents[k]->value.size();
        if (auto* g = detail::grad_of(self, k))
          for (std::size_t i = 0; i < n; ++i) (*g)[i] += self.grad[off + i];
        off += n;
      }
    });
  }
  if (axis == 1) {
    const std::size_t R = xs[0].rows();
    std::size_t C = 0;
    for (const auto& x : xs) {
      if (x.rows() != R)
        throw DimensionError("concat(axis=1): " + shape_str(x.shape()) + " vs " + shape_str(xs[0].shape()));
      C += x.cols();
    }
    Tensor out({R, C});
    std::size_t off = 0;
    for (const auto& x : xs) {
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) out(r, off + c) = x.value()(r, c);
      off += x.cols();
    }
    return detail::make_result(std::move(out), xs, [](Node& self) {
      std::size_t off = 0;
      for (std::size_t k = 0; k < self.parents.size(); ++k) {
        const std::size_t w = self.parents[k]->value.cols();
        if (auto* g = detail::grad_of(self, k))
          for (std::size_t r = 0; r < self.value.rows(); ++r)
            for (std::size_t c = 0; c < w; ++c) (*g)(r, c) += self.grad(r, off + c);
        off += w;
      }
    });
  }
  throw DimensionError("concat: axis must be 0 or 1");
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return detail::make_result(Tensor::scalar(s), {x}, [](Node& self) {
    if (auto* gx = detail::grad_of(self, 0))
      for (auto& g : gx->values()) g += self.grad[0];
  });
}

inline Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

/// Sum along `axis`: 0 gives a 1xC row, 1 gives an Rx1 column.
inline Var sum(const Var& x, int axis) {
  detail::require_rank2(x.value(), "sum");
  const std::size_t R = x.rows(), C = x.cols();
  if (axis != 0 && axis != 1) throw DimensionError("sum: axis must be 0 or 1");
  Tensor out = axis == 0 ? Tensor({1, C}) : Tensor({R, 1});
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) out[axis == 0 ? c : r] += x.value()(r, c);
  return detail::make_result(std::move(out), {x}, [axis](Node& self) {
    if (auto* gx = detail::grad_of(self, 0))
      for (std::size_t r = 0; r < gx->rows(); ++r)
        for (std::size_t c = 0; c < gx->cols(); ++c) (*gx)(r, c) += self.grad[axis == 0 ? c : r];
  });
}

inline Var mean(const Var& x, int axis) {
  const double n = static_cast<double>(axis == 0 ? x.rows() : x.cols());
  return scale(sum(x, axis), 1.0 / n);
}

// ---------------------------------------------------------------------------
// Interpolation along an axis

enum class InterpMode { kLinear, kArea };

/// Weight matrix W (out x in) such that resampling is W * x along rows.
/// Linear mode samples at half-pixel centres with edge clamping; area mode
/// averages the covered source extent. Both reduce to identity when out == in.
inline Tensor interpolation_matrix(std::size_t in, std::size_t out, InterpMode mode) {
  if (in == 0 || out == 0) throw DimensionError("interpolate: zero extent");
  Tensor w({out, in});
  if (mode == InterpMode::kArea) {
    for (std::size_t i = 0; i < out; ++i) {
      const std::size_t start = (i * in) / out;
      const std::size_t end = ((i + 1) * in + out - 1) / out;
      for (std::size_t j = start; j < end; ++j) w(i, j) = 1.0 / static_cast<double>(end - start);
    }
    return w;
  }
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    auto i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    const double lambda = src - static_cast<double>(i0);
    w(i, i0) += 1.0 - lambda;
    w(i, i1) += lambda;
  }
  return w;
}

inline Var interpolate(const Var& x, std::size_t out_len, InterpMode mode, int axis = 0) {
  detail::require_rank2(x.value(), "interpolate");
  if (axis == 1) return transpose(interpolate(transpose(x), out_len, mode, 0));
  if (axis != 0) throw DimensionError("interpolate: axis must be 0 or 1");
  if (out_len == x.rows()) return x;
  return matmul(Var::constant(interpolation_matrix(x.rows(), out_len, mode)), x);
}

// ---------------------------------------------------------------------------
// Stochastic

/// Inverted dropout; identity when !training or p == 0.
inline Var dropout(const Var& x, double p, std::mt19937_64& rng, bool training) {
  if (!training || p <= 0.0) return x;
  if (p >= 1.0) throw UsageError("dropout: rate must be < 1");
  std::bernoulli_distribution keep(1.0 - p);
  Tensor mask(x.shape());
  for (auto& m : mask.values()) m = keep(rng) ? 1.0 / (1.0 - p) : 0.0;
  return mul(x, Var::constant(std::move(mask)));
}

// ---------------------------------------------------------------------------
// Losses

/// Sum over rows of weight[r] * -log softmax(logits)[r, target[r]].
/// Rows with weight 0 are ignored. Empty weights means all ones.
inline Var cross_entropy_sum(const Var& logits, const std::vector<std::size_t>& target,
                             std::vector<double> weight = {}) {
  detail::require_rank2(logits.value(), "cross_entropy");
  const std::size_t R = logits.rows(), C = logits.cols();
  if (target.size() != R)
    throw DimensionError("cross_entropy: " + std::to_string(target.size()) + " targets for logits " +
                         shape_str(logits.shape()));
  if (weight.empty()) weight.assign(R, 1.0);
  if (weight.size() != R) throw DimensionError("cross_entropy: weight count mismatch");
  Tensor probs = logits.value();
  double loss = 0.0;
  for (std::size_t r = 0; r < R; ++r) {
    if (target[r] >= C) throw DimensionError("cross_entropy: target class out of range");
    auto row = probs.row(r);
    const double m = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (auto& v : row) z += (v = std::exp(v - m));
    for (auto& v : row) v /= z;
    if (weight[r] != 0.0) loss += weight[r] * -(logits.value()(r, target[r]) - m - std::log(z));
  }
  return detail::make_result(Tensor::scalar(loss), {logits},
                             [probs = std::move(probs), target, weight = std::move(weight)](Node& self) {
                               auto* gx = detail::grad_of(self, 0);
                               if (!gx) return;
                               const double g = self.grad[0];
                               for (std::size_t r = 0; r < probs.rows(); ++r) {
                                 if (weight[r] == 0.0) continue;
                                 for (std::size_t c = 0; c < probs.cols(); ++c) {
                                   const double onehot = c == target[r] ? 1.0 : 0.0;
                                   (*gx)(r, c) += g * weight[r] * (probs(r, c) - onehot);
                                 }
                               }
                             });
}

// ---------------------------------------------------------------------------
// Backward pass

/// Accumulates d(root)/d(leaf) into every reachable leaf with requires_grad.
inline void backward(const Var& root) {
  if (root.value().size() != 1) throw DimensionError("backward: root must be scalar, got " + shape_str(root.shape()));
  if (!root.requires_grad()) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->has_grad()) n->backward(*n);
  }
}

}  // namespace mag

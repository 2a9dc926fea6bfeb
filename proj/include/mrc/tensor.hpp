#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <initializer_list>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mrc/errors.hpp"
#include "mrc/rng.hpp"

// Minimal dense tensor library with reverse-mode automatic differentiation.
// It supplies exactly the operations the model needs: rank-1/rank-2 tensors,
// matmul, masked softmax, masked mean pooling, layer norm, GELU, slicing and
// concatenation, embedding lookup, dropout and a fused cross-entropy.
//
// The scalar type is a template parameter: training runs in float, gradient
// checking re-runs the same graph in double, where central differences are
// quiet enough for tight tolerances.

namespace mrc {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

template <class S>
struct Storage {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;     // lazily allocated, same length as value once touched
  std::uint64_t tape = 0;  // id of the tape this tensor is recorded on, 0 = none
  std::size_t node = 0;
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), S(0));
  }
};

}  // namespace detail

template <class S>
class Tape;

// Value-semantic handle to a shared storage block. Values are treated as
// immutable once a tensor participates in a graph; grad buffers are the only
// mutable part.
template <class S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() = default;

  static Tensor zeros(Shape shape) {
    std::vector<S> values(shape_numel(shape), S(0));
    return from(std::move(shape), std::move(values));
  }

  static Tensor full(Shape shape, S v) {
    std::vector<S> values(shape_numel(shape), v);
    return from(std::move(shape), std::move(values));
  }

  static Tensor from(Shape shape, std::vector<S> values) {
    if (shape_numel(shape) != values.size())
      throw DimensionError("tensor data length " + std::to_string(values.size()) +
                           " does not match shape " + shape_str(shape));
    auto st = std::make_shared<detail::Storage<S>>();
    st->shape = std::move(shape);
    st->value = std::move(values);
    return Tensor(std::move(st));
  }

  static Tensor scalar(S v) { return from({1}, {v}); }

  bool defined() const { return st_ != nullptr; }
  const Shape& shape() const { return st_->shape; }
  std::size_t rank() const { return st_->shape.size(); }
  std::size_t numel() const { return st_->value.size(); }
  std::size_t rows() const { return st_->shape[0]; }
  std::size_t cols() const { return st_->shape[1]; }

  std::span<S> value() { return st_->value; }
  std::span<const S> value() const { return st_->value; }

  S item() const {
    if (numel() != 1)
      throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return st_->value[0];
  }

  S& at(std::size_t i, std::size_t j) { return st_->value[i * cols() + j]; }
  S at(std::size_t i, std::size_t j) const { return st_->value[i * cols() + j]; }

  // Gradients live on the shared storage: handles are value-like, so grad
  // mutation is allowed through const handles.
  bool has_grad() const { return !st_->grad.empty(); }
  std::span<const S> grad() const { return st_->grad; }
  std::span<S> mutable_grad() const {
    st_->ensure_grad();
    return st_->grad;
  }
  void zero_grad() const { st_->grad.clear(); }

  Tensor& set_requires_grad(bool b = true) {
    st_->requires_grad = b;
    return *this;
  }
  bool requires_grad() const { return st_->requires_grad; }

  // Deep copy of the values; the copy is off-tape and carries no grad.
  Tensor clone() const {
    auto c = from(st_->shape, st_->value);
    c.st_->requires_grad = st_->requires_grad;
    return c;
  }

  // Value-converting copy, used to re-run a float graph in double.
  template <class T>
  Tensor<T> cast() const {
    std::vector<T> v(st_->value.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(st_->value[i]);
    auto c = Tensor<T>::from(st_->shape, std::move(v));
    c.set_requires_grad(st_->requires_grad);
    return c;
  }

  bool all_finite() const {
    for (S v : st_->value)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  bool same_storage(const Tensor& other) const { return st_ == other.st_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Storage<S>> st) : st_(std::move(st)) {}
  std::shared_ptr<detail::Storage<S>> st_;
  friend class Tape<S>;
  template <class T>
  friend class Tensor;
};

// Append-only record of operations for one training step. Backward replays
// the record once, in reverse, accumulating gradients additively across
// fan-out. Tensors that are neither recorded nor marked requires_grad are
// treated as constants.
template <class S>
class Tape {
 public:
  using PullFn = std::function<void(const detail::Storage<S>& out)>;

  Tape() : id_(next_id()) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers a leaf (typically a parameter) so gradients accumulate into it.
  void watch(const Tensor<S>& t) {
    auto& st = *t.st_;
    if (st.tape == id_) return;
    st.tape = id_;
    st.node = nodes_.size();
    nodes_.push_back(Node{t.st_, nullptr});
  }

  bool tracked(const Tensor<S>& t) const { return t.st_->tape == id_; }

  std::size_t num_nodes() const { return nodes_.size(); }

  void backward(const Tensor<S>& loss) {
    if (!loss.defined()) throw GraphError("backward: loss tensor is empty");
    if (loss.numel() != 1)
      throw DimensionError("backward: loss must be a scalar, got shape " +
                           shape_str(loss.shape()));
    if (loss.st_->tape != id_)
      throw GraphError("backward: loss is not recorded on this tape");
    loss.st_->ensure_grad();
    loss.st_->grad[0] += S(1);
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.pull) continue;              // leaf
      if (n.out->grad.empty()) continue;  // no downstream influence
      n.pull(*n.out);
    }
  }

  // Admits inputs into the graph: already-recorded tensors stay as they are,
  // requires_grad tensors become leaves, everything else is a constant.
  // Returns one flag per input telling the op whether to propagate into it.
  std::vector<bool> admit(std::initializer_list<Tensor<S>> inputs) {
    std::vector<bool> active;
    active.reserve(inputs.size());
    for (const Tensor<S>& t : inputs) {
      if (t.st_->tape == id_) {
        active.push_back(true);
      } else if (t.st_->requires_grad) {
        watch(t);
        active.push_back(true);
      } else {
        active.push_back(false);
      }
    }
    return active;
  }

  Tensor<S> emit(Shape shape, std::vector<S> value, PullFn pull) {
    Tensor<S> out = Tensor<S>::from(std::move(shape), std::move(value));
    out.st_->tape = id_;
    out.st_->node = nodes_.size();
    nodes_.push_back(Node{out.st_, std::move(pull)});
    return out;
  }

 private:
  struct Node {
    std::shared_ptr<detail::Storage<S>> out;  // keeps intermediates alive
    PullFn pull;                              // null for leaves
  };

  static std::uint64_t next_id() {
    static std::uint64_t counter = 0;
    return ++counter;
  }

  std::vector<Node> nodes_;
  std::uint64_t id_;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

namespace detail {

template <class S>
void require_rank(const Tensor<S>& t, std::size_t r, const char* op) {
  if (t.rank() != r)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(r) +
                         " tensor, got shape " + shape_str(t.shape()));
}

template <class S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

}  // namespace detail

// C = A·B with dA += dC·Bᵀ and dB += Aᵀ·dC.
template <class S>
Tensor<S> matmul(Tape<S>& tp, const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  std::vector<S> out(m * n, S(0));
  {
    auto av = a.value();
    auto bv = b.value();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const S aip = av[i * k + p];
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
      }
  }
  auto active = tp.admit({a, b});
  return tp.emit({m, n}, std::move(out),
                 [a, b, active, m, k, n](const detail::Storage<S>& o) {
                   std::span<const S> go = o.grad;
                   if (active[0]) {
                     auto ga = a.mutable_grad();
                     auto bv = b.value();
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j) {
                         const S g = go[i * n + j];
                         for (std::size_t p = 0; p < k; ++p)
                           ga[i * k + p] += g * bv[p * n + j];
                       }
                   }
                   if (active[1]) {
                     auto gb = b.mutable_grad();
                     auto av = a.value();
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t p = 0; p < k; ++p) {
                         const S aip = av[i * k + p];
                         for (std::size_t j = 0; j < n; ++j)
                           gb[p * n + j] += aip * go[i * n + j];
                       }
                   }
                 });
}

// Elementwise sum of two same-shape tensors.
template <class S>
Tensor<S> add(Tape<S>& tp, const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<S> out(a.numel());
  auto av = a.value();
  auto bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  auto active = tp.admit({a, b});
  return tp.emit(a.shape(), std::move(out),
                 [a, b, active](const detail::Storage<S>& o) {
                   if (active[0]) {
                     auto g = a.mutable_grad();
                     for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                   }
                   if (active[1]) {
                     auto g = b.mutable_grad();
                     for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                   }
                 });
}

// Adds a row vector to every row of a matrix.
template <class S>
Tensor<S> add_bias(Tape<S>& tp, const Tensor<S>& x, const Tensor<S>& bias) {
  detail::require_rank(x, 2, "add_bias");
  detail::require_rank(bias, 1, "add_bias");
  const std::size_t m = x.rows(), n = x.cols();
  if (bias.numel() != n)
    throw DimensionError("add_bias: bias length " + shape_str(bias.shape()) +
                         " does not match columns of " + shape_str(x.shape()));
  std::vector<S> out(m * n);
  auto xv = x.value();
  auto bv = bias.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] + bv[j];
  auto active = tp.admit({x, bias});
  return tp.emit({m, n}, std::move(out),
                 [x, bias, active, m, n](const detail::Storage<S>& o) {
                   if (active[0]) {
                     auto g = x.mutable_grad();
                     for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                   }
                   if (active[1]) {
                     auto g = bias.mutable_grad();
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j) g[j] += o.grad[i * n + j];
                   }
                 });
}

// Hadamard product.
template <class S>
Tensor<S> mul(Tape<S>& tp, const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<S> out(a.numel());
  auto av = a.value();
  auto bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  auto active = tp.admit({a, b});
  return tp.emit(a.shape(), std::move(out),
                 [a, b, active](const detail::Storage<S>& o) {
                   if (active[0]) {
                     auto g = a.mutable_grad();
                     auto bv2 = b.value();
                     for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * bv2[i];
                   }
                   if (active[1]) {
                     auto g = b.mutable_grad();
                     auto av2 = a.value();
                     for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * av2[i];
                   }
                 });
}

// Multiplication by a compile-time constant scalar.
template <class S>
Tensor<S> scale(Tape<S>& tp, const Tensor<S>& x, S c) {
  std::vector<S> out(x.numel());
  auto xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * c;
  auto active = tp.admit({x});
  return tp.emit(x.shape(), std::move(out),
                 [x, active, c](const detail::Storage<S>& o) {
                   if (active[0]) {
                     auto g = x.mutable_grad();
                     for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * o.grad[i];
                   }
                 });
}

// Exact GELU, x·Φ(x); derivative Φ(x) + x·φ(x).
template <class S>
Tensor<S> gelu(Tape<S>& tp, const Tensor<S>& x) {
  std::vector<S> out(x.numel());
  auto xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = static_cast<double>(xv[i]);
    out[i] = static_cast<S>(0.5 * v * (1.0 + std::erf(v * 0.7071067811865476)));
  }
  auto active = tp.admit({x});
  return tp.emit(x.shape(), std::move(out),
                 [x, active](const detail::Storage<S>& o) {
                   if (!active[0]) return;
                   auto g = x.mutable_grad();
                   auto xv2 = x.value();
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     const double v = static_cast<double>(xv2[i]);
                     const double cdf = 0.5 * (1.0 + std::erf(v * 0.7071067811865476));
                     const double pdf = std::exp(-0.5 * v * v) * 0.3989422804014327;
                     g[i] += o.grad[i] * static_cast<S>(cdf + v * pdf);
                   }
                 });
}

// Row-wise layer normalization with learned gain and bias.
template <class S>
Tensor<S> layer_norm(Tape<S>& tp, const Tensor<S>& x, const Tensor<S>& gain,
                     const Tensor<S>& bias, double eps = 1e-5) {
  detail::require_rank(x, 2, "layer_norm");
  const std::size_t m = x.rows(), n = x.cols();
  if (gain.numel() != n || bias.numel() != n)
    throw DimensionError("layer_norm: gain/bias length must match columns of " +
                         shape_str(x.shape()));
  std::vector<S> out(m * n);
  std::vector<S> xhat(m * n);
  std::vector<S> inv_std(m);
  auto xv = x.value();
  auto gv = gain.value();
  auto bv = bias.value();
  for (std::size_t i = 0; i < m; ++i) {
    double mean = 0;
    for (std::size_t j = 0; j < n; ++j) mean += static_cast<double>(xv[i * n + j]);
    mean /= static_cast<double>(n);
    double var = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = static_cast<double>(xv[i * n + j]) - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double istd = 1.0 / std::sqrt(var + eps);
    inv_std[i] = static_cast<S>(istd);
    for (std::size_t j = 0; j < n; ++j) {
      const S h = static_cast<S>((static_cast<double>(xv[i * n + j]) - mean) * istd);
      xhat[i * n + j] = h;
      out[i * n + j] = gv[j] * h + bv[j];
    }
  }
  auto active = tp.admit({x, gain, bias});
  return tp.emit(
      {m, n}, std::move(out),
      [x, gain, bias, active, m, n, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](const detail::Storage<S>& o) {
        auto gv2 = gain.value();
        if (active[1]) {
          auto gg = gain.mutable_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
              gg[j] += o.grad[i * n + j] * xhat[i * n + j];
        }
        if (active[2]) {
          auto gb = bias.mutable_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gb[j] += o.grad[i * n + j];
        }
        if (active[0]) {
          auto gx = x.mutable_grad();
          for (std::size_t i = 0; i < m; ++i) {
            double mean_dh = 0, mean_dh_h = 0;
            for (std::size_t j = 0; j < n; ++j) {
              const double dh =
                  static_cast<double>(o.grad[i * n + j]) * static_cast<double>(gv2[j]);
              mean_dh += dh;
              mean_dh_h += dh * static_cast<double>(xhat[i * n + j]);
            }
            mean_dh /= static_cast<double>(n);
            mean_dh_h /= static_cast<double>(n);
            for (std::size_t j = 0; j < n; ++j) {
              const double dh =
                  static_cast<double>(o.grad[i * n + j]) * static_cast<double>(gv2[j]);
              gx[i * n + j] += static_cast<S>(
                  static_cast<double>(inv_std[i]) *
                  (dh - mean_dh - static_cast<double>(xhat[i * n + j]) * mean_dh_h));
            }
          }
        }
      });
}

// Softmax over the last axis with a binary mask. Masked positions get exactly
// probability zero; rows are stabilized by subtracting the unmasked maximum.
// The mask is a constant: no gradient flows into it. Accepts rank-1 logits
// with a rank-1 mask, or rank-2 logits with either a matching rank-2 mask or
// a single rank-1 mask broadcast across rows. An all-masked row is an error,
// never a NaN.
template <class S>
Tensor<S> masked_softmax(Tape<S>& tp, const Tensor<S>& logits, const Tensor<S>& mask) {
  const bool rank1 = logits.rank() == 1;
  if (!rank1) detail::require_rank(logits, 2, "masked_softmax");
  const std::size_t rows = rank1 ? 1 : logits.rows();
  const std::size_t cols = rank1 ? logits.numel() : logits.cols();
  const bool broadcast = mask.numel() == cols && (mask.rank() == 1 || rows == 1);
  if (!broadcast && mask.shape() != logits.shape())
    throw DimensionError("masked_softmax: mask shape " + shape_str(mask.shape()) +
                         " does not broadcast over logits " + shape_str(logits.shape()));
  std::vector<S> out(logits.numel(), S(0));
  auto lv = logits.value();
  auto mv = mask.value();
  for (std::size_t i = 0; i < rows; ++i) {
    const S* mrow = broadcast ? mv.data() : mv.data() + i * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < cols; ++j)
      if (mrow[j] != S(0)) mx = std::max(mx, static_cast<double>(lv[i * cols + j]));
    if (!std::isfinite(mx))
      throw MaskError("masked_softmax: row " + std::to_string(i) +
                      " has no unmasked entries");
    double z = 0;
    for (std::size_t j = 0; j < cols; ++j)
      if (mrow[j] != S(0)) {
        const double e = std::exp(static_cast<double>(lv[i * cols + j]) - mx);
        out[i * cols + j] = static_cast<S>(e);
        z += e;
      }
    for (std::size_t j = 0; j < cols; ++j)
      if (mrow[j] != S(0))
        out[i * cols + j] = static_cast<S>(static_cast<double>(out[i * cols + j]) / z);
  }
  auto active = tp.admit({logits});
  return tp.emit(logits.shape(), std::move(out),
                 [logits, mask, active, rows, cols,
                  broadcast](const detail::Storage<S>& o) {
                   if (!active[0]) return;
                   auto g = logits.mutable_grad();
                   auto mv2 = mask.value();
                   for (std::size_t i = 0; i < rows; ++i) {
                     const S* mrow = broadcast ? mv2.data() : mv2.data() + i * cols;
                     double dot = 0;
                     for (std::size_t j = 0; j < cols; ++j)
                       if (mrow[j] != S(0))
                         dot += static_cast<double>(o.grad[i * cols + j]) *
                                static_cast<double>(o.value[i * cols + j]);
                     for (std::size_t j = 0; j < cols; ++j)
                       if (mrow[j] != S(0))
                         g[i * cols + j] += static_cast<S>(
                             static_cast<double>(o.value[i * cols + j]) *
                             (static_cast<double>(o.grad[i * cols + j]) - dot));
                   }
                 });
}

// Mean over unmasked rows of a sequence. The mask is a constant.
template <class S>
Tensor<S> mean_pool(Tape<S>& tp, const Tensor<S>& seq, const Tensor<S>& mask) {
  detail::require_rank(seq, 2, "mean_pool");
  const std::size_t L = seq.rows(), d = seq.cols();
  if (mask.numel() != L)
    throw DimensionError("mean_pool: mask length " + shape_str(mask.shape()) +
                         " does not match rows of " + shape_str(seq.shape()));
  auto mv = mask.value();
  std::size_t cnt = 0;
  for (std::size_t i = 0; i < L; ++i)
    if (mv[i] != S(0)) ++cnt;
  if (cnt == 0) throw MaskError("mean_pool: mask selects no rows");
  std::vector<S> out(d, S(0));
  auto sv = seq.value();
  for (std::size_t i = 0; i < L; ++i)
    if (mv[i] != S(0))
      for (std::size_t j = 0; j < d; ++j) out[j] += sv[i * d + j];
  const S inv = S(1) / static_cast<S>(cnt);
  for (std::size_t j = 0; j < d; ++j) out[j] *= inv;
  auto active = tp.admit({seq});
  return tp.emit({d}, std::move(out),
                 [seq, mask, active, L, d, inv](const detail::Storage<S>& o) {
                   if (!active[0]) return;
                   auto g = seq.mutable_grad();
                   auto mv2 = mask.value();
                   for (std::size_t i = 0; i < L; ++i)
                     if (mv2[i] != S(0))
                       for (std::size_t j = 0; j < d; ++j) g[i * d + j] += inv * o.grad[j];
                 });
}

// Concatenation of two rank-1 tensors.
template <class S>
Tensor<S> concat(Tape<S>& tp, const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_rank(a, 1, "concat");
  detail::require_rank(b, 1, "concat");
  const std::size_t p = a.numel(), q = b.numel();
  std::vector<S> out(p + q);
  auto av = a.value();
  auto bv = b.value();
  for (std::size_t i = 0; i < p; ++i) out[i] = av[i];
  for (std::size_t i = 0; i < q; ++i) out[p + i] = bv[i];
  auto active = tp.admit({a, b});
  return tp.emit({p + q}, std::move(out),
                 [a, b, active, p, q](const detail::Storage<S>& o) {
                   if (active[0]) {
                     auto g = a.mutable_grad();
                     for (std::size_t i = 0; i < p; ++i) g[i] += o.grad[i];
                   }
                   if (active[1]) {
                     auto g = b.mutable_grad();
                     for (std::size_t i = 0; i < q; ++i) g[i] += o.grad[p + i];
                   }
                 });
}

// Contiguous row slice [r0, r1) of a matrix.
template <class S>
Tensor<S> slice_rows(Tape<S>& tp, const Tensor<S>& x, std::size_t r0, std::size_t r1) {
  detail::require_rank(x, 2, "slice_rows");
  const std::size_t m = x.rows(), n = x.cols();
  if (r0 >= r1 || r1 > m)
    throw DimensionError("slice_rows: range [" + std::to_string(r0) + ", " +
                         std::to_string(r1) + ") invalid for " + shape_str(x.shape()));
  std::vector<S> out((r1 - r0) * n);
  auto xv = x.value();
  std::copy(xv.begin() + r0 * n, xv.begin() + r1 * n, out.begin());
  auto active = tp.admit({x});
  return tp.emit({r1 - r0, n}, std::move(out),
                 [x, active, r0, n](const detail::Storage<S>& o) {
                   if (!active[0]) return;
                   auto g = x.mutable_grad();
                   for (std::size_t i = 0; i < o.grad.size(); ++i)
                     g[r0 * n + i] += o.grad[i];
                 });
}

// Contiguous column slice [c0, c1) of a matrix.
template <class S>
Tensor<S> slice_cols(Tape<S>& tp, const Tensor<S>& x, std::size_t c0, std::size_t c1) {
  detail::require_rank(x, 2, "slice_cols");
  const std::size_t m = x.rows(), n = x.cols();
  if (c0 >= c1 || c1 > n)
    throw DimensionError("slice_cols: range [" + std::to_string(c0) + ", " +
                         std::to_string(c1) + ") invalid for " + shape_str(x.shape()));
  const std::size_t w = c1 - c0;
  std::vector<S> out(m * w);
  auto xv = x.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = xv[i * n + c0 + j];
  auto active = tp.admit({x});
  return tp.emit({m, w}, std::move(out),
                 [x, active, m, n, c0, w](const detail::Storage<S>& o) {
                   if (!active[0]) return;
                   auto g = x.mutable_grad();
                   for (std::size_t i = 0; i < m; ++i)
                     for (std::size_t j = 0; j < w; ++j)
                       g[i * n + c0 + j] += o.grad[i * w + j];
                 });
}

// Concatenates matrices with equal row counts along the column axis.
template <class S>
Tensor<S> concat_cols(Tape<S>& tp, const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_rank(p, 2, "concat_cols");
    if (p.rows() != m)
      throw DimensionError("concat_cols: row count mismatch " +
                           shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    total += p.cols();
  }
  std::vector<S> out(m * total);
  std::size_t off = 0;
  for (const auto& p : parts) {
    auto pv = p.value();
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * total + off + j] = pv[i * w + j];
    off += w;
  }
  std::vector<bool> active;
  active.reserve(parts.size());
  for (const auto& p : parts) active.push_back(tp.admit({p})[0]);
  auto inputs = parts;
  return tp.emit({m, total}, std::move(out),
                 [inputs, active, m, total](const detail::Storage<S>& o) {
                   std::size_t off2 = 0;
                   for (std::size_t k = 0; k < inputs.size(); ++k) {
                     const std::size_t w = inputs[k].cols();
                     if (active[k]) {
                       auto g = inputs[k].mutable_grad();
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < w; ++j)
                           g[i * w + j] += o.grad[i * total + off2 + j];
                     }
                     off2 += w;
                   }
                 });
}

// Reinterprets the buffer under a new shape with the same element count.
template <class S>
Tensor<S> reshape(Tape<S>& tp, const Tensor<S>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  std::vector<S> out(x.value().begin(), x.value().end());
  auto active = tp.admit({x});
  return tp.emit(std::move(shape), std::move(out),
                 [x, active](const detail::Storage<S>& o) {
                   if (!active[0]) return;
                   auto g = x.mutable_grad();
                   for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                 });
}

template <class S>
Tensor<S> transpose(Tape<S>& tp, const Tensor<S>& x) {
  detail::require_rank(x, 2, "transpose");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<S> out(m * n);
  auto xv = x.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = xv[i * n + j];
  auto active = tp.admit({x});
  return tp.emit({n, m}, std::move(out),
                 [x, active, m, n](const detail::Storage<S>& o) {
                   if (!active[0]) return;
                   auto g = x.mutable_grad();
                   for (std::size_t i = 0; i < m; ++i)
                     for (std::size_t j = 0; j < n; ++j) g[i * n + j] += o.grad[j * m + i];
                 });
}

// Gathers rows of an embedding table; backward scatters into the table.
template <class S>
Tensor<S> embedding(Tape<S>& tp, const Tensor<S>& table, std::span<const int> ids) {
  detail::require_rank(table, 2, "embedding");
  const std::size_t V = table.rows(), d = table.cols(), L = ids.size();
  for (std::size_t i = 0; i < L; ++i)
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= V)
      throw VocabError("embedding: token id " + std::to_string(ids[i]) +
                       " outside table of " + std::to_string(V) + " rows");
  std::vector<S> out(L * d);
  auto tv = table.value();
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < d; ++j)
      out[i * d + j] = tv[static_cast<std::size_t>(ids[i]) * d + j];
  auto active = tp.admit({table});
  std::vector<int> idv(ids.begin(), ids.end());
  return tp.emit({L, d}, std::move(out),
                 [table, active, idv = std::move(idv), d](const detail::Storage<S>& o) {
                   if (!active[0]) return;
                   auto g = table.mutable_grad();
                   for (std::size_t i = 0; i < idv.size(); ++i)
                     for (std::size_t j = 0; j < d; ++j)
                       g[static_cast<std::size_t>(idv[i]) * d + j] += o.grad[i * d + j];
                 });
}

// Inner product of two rank-1 tensors, returned as a scalar tensor.
template <class S>
Tensor<S> dot(Tape<S>& tp, const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_rank(a, 1, "dot");
  detail::require_rank(b, 1, "dot");
  if (a.numel() != b.numel())
    throw DimensionError("dot: length mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  double acc = 0;
  auto av = a.value();
  auto bv = b.value();
  for (std::size_t i = 0; i < av.size(); ++i)
    acc += static_cast<double>(av[i]) * static_cast<double>(bv[i]);
  auto active = tp.admit({a, b});
  return tp.emit({1}, {static_cast<S>(acc)},
                 [a, b, active](const detail::Storage<S>& o) {
                   const S g0 = o.grad[0];
                   if (active[0]) {
                     auto g = a.mutable_grad();
                     auto bv2 = b.value();
                     for (std::size_t i = 0; i < g.size(); ++i) g[i] += g0 * bv2[i];
                   }
                   if (active[1]) {
                     auto g = b.mutable_grad();
                     auto av2 = a.value();
                     for (std::size_t i = 0; i < g.size(); ++i) g[i] += g0 * av2[i];
                   }
                 });
}

// Sum of all entries, as a scalar tensor.
template <class S>
Tensor<S> sum(Tape<S>& tp, const Tensor<S>& x) {
  double acc = 0;
  for (S v : x.value()) acc += static_cast<double>(v);
  auto active = tp.admit({x});
  return tp.emit({1}, {static_cast<S>(acc)},
                 [x, active](const detail::Storage<S>& o) {
                   if (!active[0]) return;
                   auto g = x.mutable_grad();
                   for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[0];
                 });
}

// Stacks scalar tensors into one rank-1 tensor.
template <class S>
Tensor<S> stack_scalars(Tape<S>& tp, const std::vector<Tensor<S>>& xs) {
  if (xs.empty()) throw DimensionError("stack_scalars: no inputs");
  std::vector<S> out(xs.size());
  std::vector<bool> active;
  active.reserve(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].numel() != 1)
      throw DimensionError("stack_scalars: input " + std::to_string(i) +
                           " has shape " + shape_str(xs[i].shape()));
    out[i] = xs[i].value()[0];
    active.push_back(tp.admit({xs[i]})[0]);
  }
  auto inputs = xs;
  return tp.emit({xs.size()}, std::move(out),
                 [inputs, active](const detail::Storage<S>& o) {
                   for (std::size_t i = 0; i < inputs.size(); ++i)
                     if (active[i]) inputs[i].mutable_grad()[0] += o.grad[i];
                 });
}

// Cross-entropy of a gold index against rank-1 logits, computed in log space
// via log-sum-exp. Gradient is softmax(logits) minus the gold one-hot.
template <class S>
Tensor<S> cross_entropy_with_logits(Tape<S>& tp, const Tensor<S>& logits,
                                    std::size_t gold) {
  detail::require_rank(logits, 1, "cross_entropy");
  const std::size_t n = logits.numel();
  if (gold >= n)
    throw LabelError("cross_entropy: gold index " + std::to_string(gold) +
                     " out of range for " + std::to_string(n) + " options");
  auto lv = logits.value();
  double mx = -std::numeric_limits<double>::infinity();
  for (S v : lv) mx = std::max(mx, static_cast<double>(v));
  double z = 0;
  for (S v : lv) z += std::exp(static_cast<double>(v) - mx);
  const double lse = mx + std::log(z);
  const double loss = lse - static_cast<double>(lv[gold]);
  auto active = tp.admit({logits});
  return tp.emit({1}, {static_cast<S>(loss)},
                 [logits, active, gold, mx, z](const detail::Storage<S>& o) {
                   if (!active[0]) return;
                   auto g = logits.mutable_grad();
                   auto lv2 = logits.value();
                   const double g0 = static_cast<double>(o.grad[0]);
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     const double p = std::exp(static_cast<double>(lv2[i]) - mx) / z;
                     g[i] += static_cast<S>(g0 * (p - (i == gold ? 1.0 : 0.0)));
                   }
                 });
}

// Inverted-scaling dropout with its own deterministic generator. Rate zero is
// the identity and records nothing.
template <class S>
Tensor<S> dropout(Tape<S>& tp, const Tensor<S>& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw ConfigError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  if (rate == 0.0) return x;
  const S keep_scale = static_cast<S>(1.0 / (1.0 - rate));
  std::vector<S> keep(x.numel());
  for (auto& k : keep) k = rng.uniform() < rate ? S(0) : keep_scale;
  std::vector<S> out(x.numel());
  auto xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * keep[i];
  auto active = tp.admit({x});
  return tp.emit(x.shape(), std::move(out),
                 [x, active, keep = std::move(keep)](const detail::Storage<S>& o) {
                   if (!active[0]) return;
                   auto g = x.mutable_grad();
                   for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * keep[i];
                 });
}

// Plain stable softmax over values, no tape involved. Used for reporting
// probabilities outside the graph.
template <class S>
std::vector<double> softmax_values(std::span<const S> logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (S v : logits) mx = std::max(mx, static_cast<double>(v));
  std::vector<double> p(logits.size());
  double z = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(static_cast<double>(logits[i]) - mx);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

}  // namespace mrc

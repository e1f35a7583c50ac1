#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "topiclm/errors.hpp"
#include "topiclm/rng.hpp"

namespace topiclm {

using Shape = std::vector<int>;

inline long shape_numel(const Shape& s) {
  long n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

// Dense tensor node: value, gradient of the same shape, and a flag that
// marks participation in differentiation. Rank 0 (scalar) through 4.
template <class S>
struct TensorNode {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // lazily allocated, same length as value once touched
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), S(0));
  }
};

// Value-semantics handle to a shared tensor node. Ops never mutate their
// inputs' values; gradients accumulate during backward.
template <class S>
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<S> data, bool requires_grad = false)
      : node_(std::make_shared<TensorNode<S>>()) {
    if (shape_numel(shape) != static_cast<long>(data.size()))
      throw ShapeError("tensor: shape " + shape_str(shape) + " does not match data length " +
                       std::to_string(data.size()));
    for (int d : shape)
      if (d < 1) throw ShapeError("tensor: shape entries must be >= 1, got " + shape_str(shape));
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<S> d(static_cast<std::size_t>(shape_numel(shape)), S(0));
    return Tensor(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor full(Shape shape, S v, bool requires_grad = false) {
    std::vector<S> d(static_cast<std::size_t>(shape_numel(shape)), v);
    return Tensor(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor scalar(S v, bool requires_grad = false) {
    return Tensor(Shape{}, std::vector<S>{v}, requires_grad);
  }

  static Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad = true) {
    std::vector<S> d(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : d) x = static_cast<S>(rng.normal() * stddev);
    return Tensor(std::move(shape), std::move(d), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  long numel() const { return static_cast<long>(node_->value.size()); }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }

  S* data() { return node_->value.data(); }
  const S* data() const { return node_->value.data(); }
  std::vector<S>& values() { return node_->value; }
  const std::vector<S>& values() const { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }

  std::vector<S>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const std::vector<S>& grad_or_empty() const { return node_->grad; }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), S(0));
  }

  S item() const {
    if (numel() != 1) throw ShapeError("item: tensor has " + std::to_string(numel()) + " elements");
    return node_->value[0];
  }

  S at(std::initializer_list<int> idx) const {
    long off = 0;
    long stride = 1;
    const auto& sh = node_->shape;
    std::vector<int> ix(idx);
    for (int k = static_cast<int>(sh.size()) - 1; k >= 0; --k) {
      off += static_cast<long>(ix[static_cast<std::size_t>(k)]) * stride;
      stride *= sh[static_cast<std::size_t>(k)];
    }
    return node_->value[static_cast<std::size_t>(off)];
  }

  std::shared_ptr<TensorNode<S>> node() const { return node_; }

 private:
  std::shared_ptr<TensorNode<S>> node_;
};

// Ordered record of executed differentiable operations. Execution order is
// a topological order of the graph, so backward is a plain reverse replay.
template <class S>
class Tape {
 public:
  void record(std::function<void()> fn) { steps_.push_back(std::move(fn)); }

  std::size_t size() const { return steps_.size(); }

  void clear() { steps_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and replays every recorded op in exact
  // reverse execution order. Gradients land in the grad buffers of every
  // grad-flagged tensor reachable from the loss.
  void backward(const Tensor<S>& loss) {
    if (loss.numel() != 1)
      throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    if (!loss.requires_grad())
      throw ShapeError("backward: loss does not require grad (not on the tape)");
    loss.node()->ensure_grad();
    loss.node()->grad[0] += S(1);
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> steps_;
};

namespace detail {

// Output-aligned element strides for broadcasting: 0 where the input dim is 1.
inline std::array<long, 4> bcast_strides(const Shape& in, const Shape& out) {
  std::array<long, 4> st{0, 0, 0, 0};
  const int ro = static_cast<int>(out.size());
  const int ri = static_cast<int>(in.size());
  long stride = 1;
  // walk from the last axis
  for (int k = ri - 1; k >= 0; --k) {
    const int oaxis = k + (ro - ri);
    st[static_cast<std::size_t>(oaxis)] = (in[static_cast<std::size_t>(k)] == 1) ? 0 : stride;
    stride *= in[static_cast<std::size_t>(k)];
  }
  return st;
}

inline Shape bcast_shape(const Shape& a, const Shape& b, const char* op) {
  const int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
  const int r = std::max(ra, rb);
  if (r > 4) throw ShapeError(std::string(op) + ": rank > 4 unsupported");
  Shape out(static_cast<std::size_t>(r));
  for (int k = 0; k < r; ++k) {
    const int da = (k - (r - ra) >= 0) ? a[static_cast<std::size_t>(k - (r - ra))] : 1;
    const int db = (k - (r - rb) >= 0) ? b[static_cast<std::size_t>(k - (r - rb))] : 1;
    if (da != db && da != 1 && db != 1)
      throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                       " are not broadcastable");
    out[static_cast<std::size_t>(k)] = std::max(da, db);
  }
  return out;
}

// Iterates an output shape of rank <= 4, producing linear offsets into two
// broadcast inputs.
template <class Fn>
inline void for_each_bcast(const Shape& out, const std::array<long, 4>& sa,
                           const std::array<long, 4>& sb, Fn&& fn) {
  const int r = static_cast<int>(out.size());
  std::array<int, 4> dims{1, 1, 1, 1};
  std::array<long, 4> aa = sa, bb = sb;
  // right-align into 4 slots
  for (int k = 0; k < r; ++k) dims[static_cast<std::size_t>(4 - r + k)] = out[static_cast<std::size_t>(k)];
  if (r < 4) {
    for (int k = 3; k >= 4 - r; --k) {
      aa[static_cast<std::size_t>(k)] = sa[static_cast<std::size_t>(k - (4 - r))];
      bb[static_cast<std::size_t>(k)] = sb[static_cast<std::size_t>(k - (4 - r))];
    }
    for (int k = 0; k < 4 - r; ++k) {
      aa[static_cast<std::size_t>(k)] = 0;
      bb[static_cast<std::size_t>(k)] = 0;
    }
  }
  long io = 0;
  for (int i0 = 0; i0 < dims[0]; ++i0)
    for (int i1 = 0; i1 < dims[1]; ++i1)
      for (int i2 = 0; i2 < dims[2]; ++i2)
        for (int i3 = 0; i3 < dims[3]; ++i3) {
          const long ia = i0 * aa[0] + i1 * aa[1] + i2 * aa[2] + i3 * aa[3];
          const long ib = i0 * bb[0] + i1 * bb[1] + i2 * bb[2] + i3 * bb[3];
          fn(io++, ia, ib);
        }
}

template <class S>
inline void check_finite(const Tensor<S>& t, const char* op) {
  for (S v : t.values())
    if (!std::isfinite(static_cast<double>(v)))
      throw NumericError(std::string(op) + ": non-finite input");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops with numpy-style broadcasting (rank <= 4).
// ---------------------------------------------------------------------------

template <class S, class FwdF, class BwdF>
Tensor<S> binary_op(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b, const char* name,
                    FwdF fwd, BwdF bwd) {
  const Shape out_shape = detail::bcast_shape(a.shape(), b.shape(), name);
  auto sa = detail::bcast_strides(a.shape(), out_shape);
  auto sb = detail::bcast_strides(b.shape(), out_shape);
  Tensor<S> out = Tensor<S>::zeros(out_shape);
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  detail::for_each_bcast(out_shape, sa, sb,
                         [&](long io, long ia, long ib) { po[io] = fwd(pa[ia], pb[ib]); });
  if (a.requires_grad() || b.requires_grad()) {
    out.set_requires_grad(true);
    auto an = a.node();
    auto bn = b.node();
    auto on = out.node();
    tape.record([an, bn, on, sa, sb, out_shape, bwd]() {
      if (on->grad.empty()) return;
      if (an->requires_grad) an->ensure_grad();
      if (bn->requires_grad) bn->ensure_grad();
      const S* pa2 = an->value.data();
      const S* pb2 = bn->value.data();
      const S* g = on->grad.data();
      detail::for_each_bcast(out_shape, sa, sb, [&](long io, long ia, long ib) {
        S da, db;
        bwd(pa2[ia], pb2[ib], g[io], da, db);
        if (an->requires_grad) an->grad[static_cast<std::size_t>(ia)] += da;
        if (bn->requires_grad) bn->grad[static_cast<std::size_t>(ib)] += db;
      });
    });
  }
  return out;
}

template <class S>
Tensor<S> add(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  return binary_op(
      tape, a, b, "add", [](S x, S y) { return x + y; },
      [](S, S, S g, S& da, S& db) {
        da = g;
        db = g;
      });
}

template <class S>
Tensor<S> sub(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  return binary_op(
      tape, a, b, "sub", [](S x, S y) { return x - y; },
      [](S, S, S g, S& da, S& db) {
        da = g;
        db = -g;
      });
}

template <class S>
Tensor<S> mul(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  return binary_op(
      tape, a, b, "mul", [](S x, S y) { return x * y; },
      [](S x, S y, S g, S& da, S& db) {
        da = g * y;
        db = g * x;
      });
}

template <class S>
Tensor<S> div(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  return binary_op(
      tape, a, b, "div", [](S x, S y) { return x / y; },
      [](S x, S y, S g, S& da, S& db) {
        da = g / y;
        db = -g * x / (y * y);
      });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops.
// ---------------------------------------------------------------------------

template <class S, class FwdF, class BwdF>
Tensor<S> unary_op(Tape<S>& tape, const Tensor<S>& a, FwdF fwd, BwdF bwd) {
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const S* pa = a.data();
  S* po = out.data();
  const long n = a.numel();
  for (long i = 0; i < n; ++i) po[i] = fwd(pa[i]);
  if (a.requires_grad()) {
    out.set_requires_grad(true);
    auto an = a.node();
    auto on = out.node();
    tape.record([an, on, bwd]() {
      if (on->grad.empty()) return;
      an->ensure_grad();
      const long n2 = static_cast<long>(an->value.size());
      for (long i = 0; i < n2; ++i)
        an->grad[static_cast<std::size_t>(i)] +=
            bwd(an->value[static_cast<std::size_t>(i)], on->value[static_cast<std::size_t>(i)]) *
            on->grad[static_cast<std::size_t>(i)];
    });
  }
  return out;
}

template <class S>
Tensor<S> add_scalar(Tape<S>& tape, const Tensor<S>& a, S c) {
  return unary_op(tape, a, [c](S x) { return x + c; }, [](S, S) { return S(1); });
}

template <class S>
Tensor<S> mul_scalar(Tape<S>& tape, const Tensor<S>& a, S c) {
  return unary_op(tape, a, [c](S x) { return x * c; }, [c](S, S) { return c; });
}

template <class S>
Tensor<S> exp(Tape<S>& tape, const Tensor<S>& a) {
  return unary_op(tape, a, [](S x) { return std::exp(x); }, [](S, S y) { return y; });
}

template <class S>
Tensor<S> log(Tape<S>& tape, const Tensor<S>& a) {
  return unary_op(tape, a, [](S x) { return std::log(x); }, [](S x, S) { return S(1) / x; });
}

template <class S>
Tensor<S> sqrt(Tape<S>& tape, const Tensor<S>& a) {
  return unary_op(tape, a, [](S x) { return std::sqrt(x); },
                  [](S, S y) { return S(0.5) / y; });
}

// 1 / (1 + exp(-x)), evaluated on the non-overflowing branch.
template <class S>
Tensor<S> sigmoid(Tape<S>& tape, const Tensor<S>& a) {
  return unary_op(
      tape, a,
      [](S x) {
        if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
        const S e = std::exp(x);
        return e / (S(1) + e);
      },
      [](S, S y) { return y * (S(1) - y); });
}

// Exact GELU: x * Phi(x).
template <class S>
Tensor<S> gelu(Tape<S>& tape, const Tensor<S>& a) {
  const S inv_sqrt2 = static_cast<S>(0.70710678118654752440);
  const S inv_sqrt2pi = static_cast<S>(0.39894228040143267794);
  return unary_op(
      tape, a,
      [=](S x) { return S(0.5) * x * (S(1) + std::erf(x * inv_sqrt2)); },
      [=](S x, S) {
        const S phi = S(0.5) * (S(1) + std::erf(x * inv_sqrt2));
        const S pdf = inv_sqrt2pi * std::exp(S(-0.5) * x * x);
        return phi + x * pdf;
      });
}

// ---------------------------------------------------------------------------
// Matrix products.
// ---------------------------------------------------------------------------

namespace detail {

// C[m x n] += A[m x k] * B[k x n], row-major, i-k-j loop order.
template <class S>
inline void gemm_acc(const S* a, const S* b, S* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const S* arow = a + static_cast<long>(i) * k;
    S* crow = c + static_cast<long>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const S av = arow[kk];
      if (av == S(0)) continue;
      const S* brow = b + static_cast<long>(kk) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] += A[m x k] * B^T where B is [n x k].
template <class S>
inline void gemm_bt_acc(const S* a, const S* b, S* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const S* arow = a + static_cast<long>(i) * k;
    S* crow = c + static_cast<long>(i) * n;
    for (int j = 0; j < n; ++j) {
      const S* brow = b + static_cast<long>(j) * k;
      S acc = S(0);
      for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      crow[j] += acc;
    }
  }
}

// C[k x n] += A^T * B where A is [m x k], B is [m x n].
template <class S>
inline void gemm_at_acc(const S* a, const S* b, S* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const S* arow = a + static_cast<long>(i) * k;
    const S* brow = b + static_cast<long>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const S av = arow[kk];
      if (av == S(0)) continue;
      S* crow = c + static_cast<long>(kk) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

// Matrix product over the two trailing axes. Leading (batch) dims must match
// exactly, or either operand may be rank 2 and is then shared across the
// other's batch. Backward: dA = dC * B^T, dB = A^T * dC.
template <class S>
Tensor<S> matmul(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  const int m = a.dim(a.rank() - 2), ka = a.dim(a.rank() - 1);
  const int kb = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
  if (ka != kb)
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  Shape lead_a(a.shape().begin(), a.shape().end() - 2);
  Shape lead_b(b.shape().begin(), b.shape().end() - 2);
  Shape lead;
  if (lead_a == lead_b)
    lead = lead_a;
  else if (lead_a.empty())
    lead = lead_b;
  else if (lead_b.empty())
    lead = lead_a;
  else
    throw ShapeError("matmul: batch dimensions disagree, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  const long batches = shape_numel(lead);
  const bool share_a = lead_a.empty() && !lead.empty();
  const bool share_b = lead_b.empty() && !lead.empty();

  Shape out_shape = lead;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor<S> out = Tensor<S>::zeros(out_shape);
  const long an = static_cast<long>(m) * ka, bn = static_cast<long>(ka) * n,
             cn = static_cast<long>(m) * n;
  for (long bi = 0; bi < batches; ++bi) {
    detail::gemm_acc(a.data() + (share_a ? 0 : bi * an), b.data() + (share_b ? 0 : bi * bn),
                     out.data() + bi * cn, m, ka, n);
  }
  if (a.requires_grad() || b.requires_grad()) {
    out.set_requires_grad(true);
    auto anode = a.node();
    auto bnode = b.node();
    auto onode = out.node();
    const int k = ka;
    tape.record([anode, bnode, onode, batches, share_a, share_b, m, k, n, an, bn, cn]() {
      if (onode->grad.empty()) return;
      const S* g = onode->grad.data();
      if (anode->requires_grad) {
        anode->ensure_grad();
        for (long bi = 0; bi < batches; ++bi)
          detail::gemm_bt_acc(g + bi * cn, bnode->value.data() + (share_b ? 0 : bi * bn),
                              anode->grad.data() + (share_a ? 0 : bi * an), m, n, k);
      }
      if (bnode->requires_grad) {
        bnode->ensure_grad();
        for (long bi = 0; bi < batches; ++bi)
          detail::gemm_at_acc(anode->value.data() + (share_a ? 0 : bi * an), g + bi * cn,
                              bnode->grad.data() + (share_b ? 0 : bi * bn), m, k, n);
      }
    });
  }
  return out;
}

// y = x * W^T + b for W [out, in], b [out]; x may carry leading batch dims.
template <class S>
Tensor<S> linear(Tape<S>& tape, const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  if (w.rank() != 2) throw ShapeError("linear: weight must be rank 2");
  const int in = w.dim(1), outd = w.dim(0);
  if (x.dim(x.rank() - 1) != in)
    throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(w.shape()));
  if (b.defined() && (b.rank() != 1 || b.dim(0) != outd))
    throw ShapeError("linear: bias shape " + shape_str(b.shape()) + " does not match weight");
  const long rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = outd;
  Tensor<S> out = Tensor<S>::zeros(out_shape);
  const S* px = x.data();
  const S* pw = w.data();
  S* po = out.data();
  for (long r = 0; r < rows; ++r) {
    const S* xrow = px + r * in;
    S* orow = po + r * outd;
    for (int o = 0; o < outd; ++o) {
      const S* wrow = pw + static_cast<long>(o) * in;
      S acc = b.defined() ? b.data()[o] : S(0);
      for (int c = 0; c < in; ++c) acc += xrow[c] * wrow[c];
      orow[o] = acc;
    }
  }
  if (x.requires_grad() || w.requires_grad() || (b.defined() && b.requires_grad())) {
    out.set_requires_grad(true);
    auto xn = x.node();
    auto wn = w.node();
    auto bn = b.defined() ? b.node() : nullptr;
    auto on = out.node();
    tape.record([xn, wn, bn, on, rows, in, outd]() {
      if (on->grad.empty()) return;
      const S* g = on->grad.data();
      if (xn->requires_grad) {
        xn->ensure_grad();
        // dx = dy * W
        for (long r = 0; r < rows; ++r)
          detail::gemm_acc(g + r * outd, wn->value.data(), xn->grad.data() + r * in, 1, outd, in);
      }
      if (wn->requires_grad) {
        wn->ensure_grad();
        // dW = dy^T * x
        detail::gemm_at_acc(g, xn->value.data(), wn->grad.data(), static_cast<int>(rows), outd,
                            in);
      }
      if (bn && bn->requires_grad) {
        bn->ensure_grad();
        for (long r = 0; r < rows; ++r)
          for (int o = 0; o < outd; ++o)
            bn->grad[static_cast<std::size_t>(o)] += g[r * outd + o];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape ops.
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> reshape(Tape<S>& tape, const Tensor<S>& a, Shape new_shape) {
  if (shape_numel(new_shape) != a.numel())
    throw ShapeError("reshape: cannot reshape " + shape_str(a.shape()) + " to " +
                     shape_str(new_shape));
  Tensor<S> out(new_shape, a.values());
  if (a.requires_grad()) {
    out.set_requires_grad(true);
    auto an = a.node();
    auto on = out.node();
    tape.record([an, on]() {
      if (on->grad.empty()) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
    });
  }
  return out;
}

template <class S>
Tensor<S> transpose(Tape<S>& tape, const Tensor<S>& a, int d0, int d1) {
  const int r = a.rank();
  if (d0 < 0) d0 += r;
  if (d1 < 0) d1 += r;
  if (d0 < 0 || d0 >= r || d1 < 0 || d1 >= r)
    throw ShapeError("transpose: axis out of range for " + shape_str(a.shape()));
  Shape out_shape = a.shape();
  std::swap(out_shape[static_cast<std::size_t>(d0)], out_shape[static_cast<std::size_t>(d1)]);
  Tensor<S> out = Tensor<S>::zeros(out_shape);

  // element-index permutation, precomputed once and reused for backward
  auto permute = [r, d0, d1](const Shape& src_shape, const Shape& dst_shape) {
    std::vector<long> map(static_cast<std::size_t>(shape_numel(dst_shape)));
    std::vector<long> sstr(static_cast<std::size_t>(r), 1);
    for (int k = r - 2; k >= 0; --k)
      sstr[static_cast<std::size_t>(k)] =
          sstr[static_cast<std::size_t>(k + 1)] * src_shape[static_cast<std::size_t>(k + 1)];
    std::vector<int> c(static_cast<std::size_t>(r), 0);
    const long n = shape_numel(dst_shape);
    for (long i = 0; i < n; ++i) {
      std::vector<int> sc = c;
      std::swap(sc[static_cast<std::size_t>(d0)], sc[static_cast<std::size_t>(d1)]);
      long off = 0;
      for (int k = 0; k < r; ++k) off += static_cast<long>(sc[static_cast<std::size_t>(k)]) * sstr[static_cast<std::size_t>(k)];
      map[static_cast<std::size_t>(i)] = off;
      for (int k = r - 1; k >= 0; --k) {
        if (++c[static_cast<std::size_t>(k)] < dst_shape[static_cast<std::size_t>(k)]) break;
        c[static_cast<std::size_t>(k)] = 0;
      }
    }
    return map;
  };
  auto map = std::make_shared<std::vector<long>>(permute(a.shape(), out_shape));
  const S* pa = a.data();
  S* po = out.data();
  for (std::size_t i = 0; i < map->size(); ++i) po[i] = pa[(*map)[i]];
  if (a.requires_grad()) {
    out.set_requires_grad(true);
    auto an = a.node();
    auto on = out.node();
    tape.record([an, on, map]() {
      if (on->grad.empty()) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < map->size(); ++i)
        an->grad[static_cast<std::size_t>((*map)[i])] += on->grad[i];
    });
  }
  return out;
}

template <class S>
Tensor<S> concat(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b, int axis) {
  const int r = a.rank();
  if (axis < 0) axis += r;
  if (b.rank() != r || axis < 0 || axis >= r)
    throw ShapeError("concat: incompatible ranks " + shape_str(a.shape()) + " / " +
                     shape_str(b.shape()));
  for (int k = 0; k < r; ++k)
    if (k != axis && a.dim(k) != b.dim(k))
      throw ShapeError("concat: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                       " differ off-axis");
  Shape out_shape = a.shape();
  out_shape[static_cast<std::size_t>(axis)] += b.dim(axis);
  Tensor<S> out = Tensor<S>::zeros(out_shape);

  long outer = 1;
  for (int k = 0; k < axis; ++k) outer *= a.dim(k);
  long inner = 1;
  for (int k = axis + 1; k < r; ++k) inner *= a.dim(k);
  const long wa = a.dim(axis) * inner, wb = b.dim(axis) * inner, wo = wa + wb;
  for (long o = 0; o < outer; ++o) {
    std::copy(a.data() + o * wa, a.data() + (o + 1) * wa, out.data() + o * wo);
    std::copy(b.data() + o * wb, b.data() + (o + 1) * wb, out.data() + o * wo + wa);
  }
  if (a.requires_grad() || b.requires_grad()) {
    out.set_requires_grad(true);
    auto an = a.node();
    auto bn = b.node();
    auto on = out.node();
    tape.record([an, bn, on, outer, wa, wb, wo]() {
      if (on->grad.empty()) return;
      const S* g = on->grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        for (long o = 0; o < outer; ++o)
          for (long i = 0; i < wa; ++i) an->grad[static_cast<std::size_t>(o * wa + i)] += g[o * wo + i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (long o = 0; o < outer; ++o)
          for (long i = 0; i < wb; ++i)
            bn->grad[static_cast<std::size_t>(o * wb + i)] += g[o * wo + wa + i];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> slice(Tape<S>& tape, const Tensor<S>& a, int axis, int offset, int len) {
  const int r = a.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r || offset < 0 || len <= 0 || offset + len > a.dim(axis))
    throw ShapeError("slice: invalid slice on " + shape_str(a.shape()));
  Shape out_shape = a.shape();
  out_shape[static_cast<std::size_t>(axis)] = len;
  Tensor<S> out = Tensor<S>::zeros(out_shape);
  long outer = 1;
  for (int k = 0; k < axis; ++k) outer *= a.dim(k);
  long inner = 1;
  for (int k = axis + 1; k < r; ++k) inner *= a.dim(k);
  const long wa = a.dim(axis) * inner, wo = static_cast<long>(len) * inner,
             start = static_cast<long>(offset) * inner;
  for (long o = 0; o < outer; ++o)
    std::copy(a.data() + o * wa + start, a.data() + o * wa + start + wo, out.data() + o * wo);
  if (a.requires_grad()) {
    out.set_requires_grad(true);
    auto an = a.node();
    auto on = out.node();
    tape.record([an, on, outer, wa, wo, start]() {
      if (on->grad.empty()) return;
      an->ensure_grad();
      for (long o = 0; o < outer; ++o)
        for (long i = 0; i < wo; ++i)
          an->grad[static_cast<std::size_t>(o * wa + start + i)] += on->grad[static_cast<std::size_t>(o * wo + i)];
    });
  }
  return out;
}

// Repeat a [B, 1, d] (or [B, d]) tensor along a new middle axis -> [B, T, d].
template <class S>
Tensor<S> expand_mid(Tape<S>& tape, const Tensor<S>& a, int times) {
  Shape in = a.shape();
  int bdim, d;
  if (in.size() == 2) {
    bdim = in[0];
    d = in[1];
  } else if (in.size() == 3 && in[1] == 1) {
    bdim = in[0];
    d = in[2];
  } else {
    throw ShapeError("expand_mid: expected [B,d] or [B,1,d], got " + shape_str(in));
  }
  Tensor<S> out = Tensor<S>::zeros({bdim, times, d});
  for (int b = 0; b < bdim; ++b)
    for (int t = 0; t < times; ++t)
      std::copy(a.data() + static_cast<long>(b) * d, a.data() + static_cast<long>(b + 1) * d,
                out.data() + (static_cast<long>(b) * times + t) * d);
  if (a.requires_grad()) {
    out.set_requires_grad(true);
    auto an = a.node();
    auto on = out.node();
    tape.record([an, on, bdim, times, d]() {
      if (on->grad.empty()) return;
      an->ensure_grad();
      for (int b = 0; b < bdim; ++b)
        for (int t = 0; t < times; ++t)
          for (int c = 0; c < d; ++c)
            an->grad[static_cast<std::size_t>(static_cast<long>(b) * d + c)] +=
                on->grad[static_cast<std::size_t>((static_cast<long>(b) * times + t) * d + c)];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions.
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> sum_all(Tape<S>& tape, const Tensor<S>& a) {
  S acc = S(0);
  for (S v : a.values()) acc += v;
  Tensor<S> out = Tensor<S>::scalar(acc);
  if (a.requires_grad()) {
    out.set_requires_grad(true);
    auto an = a.node();
    auto on = out.node();
    tape.record([an, on]() {
      if (on->grad.empty()) return;
      an->ensure_grad();
      const S g = on->grad[0];
      for (auto& x : an->grad) x += g;
    });
  }
  return out;
}

template <class S>
Tensor<S> mean_all(Tape<S>& tape, const Tensor<S>& a) {
  return mul_scalar(tape, sum_all(tape, a), S(1) / static_cast<S>(a.numel()));
}

template <class S>
Tensor<S> sum_axis(Tape<S>& tape, const Tensor<S>& a, int axis, bool keepdim) {
  const int r = a.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("sum_axis: axis out of range");
  long outer = 1;
  for (int k = 0; k < axis; ++k) outer *= a.dim(k);
  const int d = a.dim(axis);
  long inner = 1;
  for (int k = axis + 1; k < r; ++k) inner *= a.dim(k);
  Shape out_shape;
  for (int k = 0; k < r; ++k) {
    if (k == axis) {
      if (keepdim) out_shape.push_back(1);
    } else {
      out_shape.push_back(a.dim(k));
    }
  }
  Tensor<S> out = Tensor<S>::zeros(out_shape);
  const S* pa = a.data();
  S* po = out.data();
  for (long o = 0; o < outer; ++o)
    for (int j = 0; j < d; ++j)
      for (long i = 0; i < inner; ++i) po[o * inner + i] += pa[(o * d + j) * inner + i];
  if (a.requires_grad()) {
    out.set_requires_grad(true);
    auto an = a.node();
    auto on = out.node();
    tape.record([an, on, outer, d, inner]() {
      if (on->grad.empty()) return;
      an->ensure_grad();
      for (long o = 0; o < outer; ++o)
        for (int j = 0; j < d; ++j)
          for (long i = 0; i < inner; ++i)
            an->grad[static_cast<std::size_t>((o * d + j) * inner + i)] +=
                on->grad[static_cast<std::size_t>(o * inner + i)];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Neural-net specific ops.
// ---------------------------------------------------------------------------

// Softmax along `axis`, computed with max-subtraction. Total on finite
// input; non-finite input raises NumericError.
template <class S>
Tensor<S> softmax(Tape<S>& tape, const Tensor<S>& a, int axis) {
  const int r = a.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("softmax: axis out of range for " + shape_str(a.shape()));
  detail::check_finite(a, "softmax");
  long outer = 1;
  for (int k = 0; k < axis; ++k) outer *= a.dim(k);
  const int d = a.dim(axis);
  long inner = 1;
  for (int k = axis + 1; k < r; ++k) inner *= a.dim(k);
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const S* pa = a.data();
  S* po = out.data();
  for (long o = 0; o < outer; ++o) {
    for (long i = 0; i < inner; ++i) {
      S mx = pa[(o * d) * inner + i];
      for (int j = 1; j < d; ++j) mx = std::max(mx, pa[(o * d + j) * inner + i]);
      S tot = S(0);
      for (int j = 0; j < d; ++j) {
        const S e = std::exp(pa[(o * d + j) * inner + i] - mx);
        po[(o * d + j) * inner + i] = e;
        tot += e;
      }
      const S invtot = S(1) / tot;
      for (int j = 0; j < d; ++j) po[(o * d + j) * inner + i] *= invtot;
    }
  }
  if (a.requires_grad()) {
    out.set_requires_grad(true);
    auto an = a.node();
    auto on = out.node();
    tape.record([an, on, outer, d, inner]() {
      if (on->grad.empty()) return;
      an->ensure_grad();
      const S* y = on->value.data();
      const S* g = on->grad.data();
      for (long o = 0; o < outer; ++o)
        for (long i = 0; i < inner; ++i) {
          S dot = S(0);
          for (int j = 0; j < d; ++j) dot += y[(o * d + j) * inner + i] * g[(o * d + j) * inner + i];
          for (int j = 0; j < d; ++j) {
            const long ix = (o * d + j) * inner + i;
            an->grad[static_cast<std::size_t>(ix)] += y[ix] * (g[ix] - dot);
          }
        }
    });
  }
  return out;
}

// Per-position normalization over the last axis to mean 0 / variance 1,
// then elementwise scale and shift.
template <class S>
Tensor<S> layer_norm(Tape<S>& tape, const Tensor<S>& x, const Tensor<S>& scale,
                     const Tensor<S>& shift, S eps) {
  const int d = x.dim(x.rank() - 1);
  if (scale.numel() != d || shift.numel() != d)
    throw ShapeError("layer_norm: scale/shift must match last axis " + std::to_string(d));
  const long rows = x.numel() / d;
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  auto xhat = std::make_shared<std::vector<S>>(static_cast<std::size_t>(x.numel()));
  auto inv_std = std::make_shared<std::vector<S>>(static_cast<std::size_t>(rows));
  const S* px = x.data();
  const S* pg = scale.data();
  const S* pb = shift.data();
  S* po = out.data();
  for (long r = 0; r < rows; ++r) {
    const S* xr = px + r * d;
    S mu = S(0);
    for (int j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<S>(d);
    S var = S(0);
    for (int j = 0; j < d; ++j) {
      const S c = xr[j] - mu;
      var += c * c;
    }
    var /= static_cast<S>(d);
    const S istd = S(1) / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(r)] = istd;
    for (int j = 0; j < d; ++j) {
      const S xh = (xr[j] - mu) * istd;
      (*xhat)[static_cast<std::size_t>(r * d + j)] = xh;
      po[r * d + j] = pg[j] * xh + pb[j];
    }
  }
  if (x.requires_grad() || scale.requires_grad() || shift.requires_grad()) {
    out.set_requires_grad(true);
    auto xn = x.node();
    auto gn = scale.node();
    auto bn = shift.node();
    auto on = out.node();
    tape.record([xn, gn, bn, on, xhat, inv_std, rows, d]() {
      if (on->grad.empty()) return;
      const S* g = on->grad.data();
      if (gn->requires_grad) {
        gn->ensure_grad();
        for (long r = 0; r < rows; ++r)
          for (int j = 0; j < d; ++j)
            gn->grad[static_cast<std::size_t>(j)] += g[r * d + j] * (*xhat)[static_cast<std::size_t>(r * d + j)];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (long r = 0; r < rows; ++r)
          for (int j = 0; j < d; ++j) bn->grad[static_cast<std::size_t>(j)] += g[r * d + j];
      }
      if (xn->requires_grad) {
        xn->ensure_grad();
        const S* gamma = gn->value.data();
        for (long r = 0; r < rows; ++r) {
          S mean_gy = S(0), mean_gyx = S(0);
          for (int j = 0; j < d; ++j) {
            const S gy = g[r * d + j] * gamma[j];
            mean_gy += gy;
            mean_gyx += gy * (*xhat)[static_cast<std::size_t>(r * d + j)];
          }
          mean_gy /= static_cast<S>(d);
          mean_gyx /= static_cast<S>(d);
          const S istd = (*inv_std)[static_cast<std::size_t>(r)];
          for (int j = 0; j < d; ++j) {
            const S gy = g[r * d + j] * gamma[j];
            const S xh = (*xhat)[static_cast<std::size_t>(r * d + j)];
            xn->grad[static_cast<std::size_t>(r * d + j)] += (gy - mean_gy - xh * mean_gyx) * istd;
          }
        }
      }
    });
  }
  return out;
}

// Row gather: out[i, :] = table[ids[i], :]. Backward scatter-adds.
template <class S>
Tensor<S> embedding(Tape<S>& tape, const Tensor<S>& table, const std::vector<int>& ids) {
  if (table.rank() != 2) throw ShapeError("embedding: table must be rank 2");
  const int v = table.dim(0), d = table.dim(1);
  for (int id : ids)
    if (id < 0 || id >= v)
      throw std::out_of_range("embedding: id " + std::to_string(id) + " out of table range [0," +
                              std::to_string(v) + ")");
  Tensor<S> out = Tensor<S>::zeros({static_cast<int>(ids.size()), d});
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy(table.data() + static_cast<long>(ids[i]) * d,
              table.data() + static_cast<long>(ids[i] + 1) * d, out.data() + static_cast<long>(i) * d);
  if (table.requires_grad()) {
    out.set_requires_grad(true);
    auto tn = table.node();
    auto on = out.node();
    auto idc = std::make_shared<std::vector<int>>(ids);
    tape.record([tn, on, idc, d]() {
      if (on->grad.empty()) return;
      tn->ensure_grad();
      for (std::size_t i = 0; i < idc->size(); ++i)
        for (int j = 0; j < d; ++j)
          tn->grad[static_cast<std::size_t>(static_cast<long>((*idc)[i]) * d + j)] +=
              on->grad[static_cast<std::size_t>(static_cast<long>(i) * d + j)];
    });
  }
  return out;
}

// out[i, :] = mean over p in [spans[i].first, spans[i].second) of table[p, :].
template <class S>
Tensor<S> span_mean_embedding(Tape<S>& tape, const Tensor<S>& table,
                              const std::vector<std::pair<int, int>>& spans) {
  if (table.rank() != 2) throw ShapeError("span_mean_embedding: table must be rank 2");
  const int v = table.dim(0), d = table.dim(1);
  for (auto [s, e] : spans)
    if (s < 0 || e <= s || e > v)
      throw std::out_of_range("span_mean_embedding: span [" + std::to_string(s) + "," +
                              std::to_string(e) + ") out of range [0," + std::to_string(v) + ")");
  Tensor<S> out = Tensor<S>::zeros({static_cast<int>(spans.size()), d});
  for (std::size_t i = 0; i < spans.size(); ++i) {
    const auto [s, e] = spans[i];
    const S w = S(1) / static_cast<S>(e - s);
    for (int p = s; p < e; ++p)
      for (int j = 0; j < d; ++j)
        out.data()[static_cast<long>(i) * d + j] += w * table.data()[static_cast<long>(p) * d + j];
  }
  if (table.requires_grad()) {
    out.set_requires_grad(true);
    auto tn = table.node();
    auto on = out.node();
    auto sp = std::make_shared<std::vector<std::pair<int, int>>>(spans);
    tape.record([tn, on, sp, d]() {
      if (on->grad.empty()) return;
      tn->ensure_grad();
      for (std::size_t i = 0; i < sp->size(); ++i) {
        const auto [s, e] = (*sp)[i];
        const S w = S(1) / static_cast<S>(e - s);
        for (int p = s; p < e; ++p)
          for (int j = 0; j < d; ++j)
            tn->grad[static_cast<std::size_t>(static_cast<long>(p) * d + j)] +=
                w * on->grad[static_cast<std::size_t>(static_cast<long>(i) * d + j)];
      }
    });
  }
  return out;
}

// Gather rows of a [N, d] tensor by index. Backward scatter-adds.
template <class S>
Tensor<S> select_rows(Tape<S>& tape, const Tensor<S>& a, const std::vector<long>& rows) {
  if (a.rank() != 2) throw ShapeError("select_rows: expected rank-2 input");
  const long n = a.dim(0);
  const int d = a.dim(1);
  for (long r : rows)
    if (r < 0 || r >= n) throw std::out_of_range("select_rows: row index out of range");
  Tensor<S> out = Tensor<S>::zeros({static_cast<int>(rows.size()), d});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(a.data() + rows[i] * d, a.data() + (rows[i] + 1) * d,
              out.data() + static_cast<long>(i) * d);
  if (a.requires_grad()) {
    out.set_requires_grad(true);
    auto an = a.node();
    auto on = out.node();
    auto rc = std::make_shared<std::vector<long>>(rows);
    tape.record([an, on, rc, d]() {
      if (on->grad.empty()) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < rc->size(); ++i)
        for (int j = 0; j < d; ++j)
          an->grad[static_cast<std::size_t>((*rc)[i] * d + j)] +=
              on->grad[static_cast<std::size_t>(static_cast<long>(i) * d + j)];
    });
  }
  return out;
}

// Mean cross-entropy of logits [P, V] against integer labels, with a
// numerically stable log-sum-exp. P == 0 yields a constant 0.
template <class S>
Tensor<S> cross_entropy_mean(Tape<S>& tape, const Tensor<S>& logits,
                             const std::vector<int>& labels) {
  if (labels.empty()) return Tensor<S>::scalar(S(0));
  if (logits.rank() != 2 || logits.dim(0) != static_cast<int>(labels.size()))
    throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  const int p = logits.dim(0), v = logits.dim(1);
  for (int l : labels)
    if (l < 0 || l >= v) throw std::out_of_range("cross_entropy: label out of range");
  auto probs = std::make_shared<std::vector<S>>(static_cast<std::size_t>(logits.numel()));
  S total = S(0);
  const S* pl = logits.data();
  for (int i = 0; i < p; ++i) {
    const S* row = pl + static_cast<long>(i) * v;
    S mx = row[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    S tot = S(0);
    for (int j = 0; j < v; ++j) {
      const S e = std::exp(row[j] - mx);
      (*probs)[static_cast<std::size_t>(static_cast<long>(i) * v + j)] = e;
      tot += e;
    }
    const S invtot = S(1) / tot;
    for (int j = 0; j < v; ++j) (*probs)[static_cast<std::size_t>(static_cast<long>(i) * v + j)] *= invtot;
    total += std::log(tot) + mx - row[labels[static_cast<std::size_t>(i)]];
  }
  Tensor<S> out = Tensor<S>::scalar(total / static_cast<S>(p));
  if (logits.requires_grad()) {
    out.set_requires_grad(true);
    auto ln = logits.node();
    auto on = out.node();
    auto lb = std::make_shared<std::vector<int>>(labels);
    tape.record([ln, on, probs, lb, p, v]() {
      if (on->grad.empty()) return;
      ln->ensure_grad();
      const S g = on->grad[0] / static_cast<S>(p);
      for (int i = 0; i < p; ++i)
        for (int j = 0; j < v; ++j) {
          S d = (*probs)[static_cast<std::size_t>(static_cast<long>(i) * v + j)];
          if (j == (*lb)[static_cast<std::size_t>(i)]) d -= S(1);
          ln->grad[static_cast<std::size_t>(static_cast<long>(i) * v + j)] += g * d;
        }
    });
  }
  return out;
}

// Inverted-dropout with deterministic masks drawn from `rng`.
// rate <= 0 returns the input unchanged.
template <class S>
Tensor<S> dropout(Tape<S>& tape, const Tensor<S>& a, double rate, Rng& rng) {
  if (rate <= 0.0) return a;
  if (rate >= 1.0) throw ConfigError("dropout: rate must be < 1");
  const S keep_scale = static_cast<S>(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<S>>(static_cast<std::size_t>(a.numel()));
  for (auto& m : *mask) m = rng.uniform() < rate ? S(0) : keep_scale;
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  for (long i = 0; i < a.numel(); ++i)
    out.data()[i] = a.data()[i] * (*mask)[static_cast<std::size_t>(i)];
  if (a.requires_grad()) {
    out.set_requires_grad(true);
    auto an = a.node();
    auto on = out.node();
    tape.record([an, on, mask]() {
      if (on->grad.empty()) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < mask->size(); ++i) an->grad[i] += on->grad[i] * (*mask)[i];
    });
  }
  return out;
}

}  // namespace topiclm

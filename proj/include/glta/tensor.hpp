#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation on an
// explicit tape. Scalar type is a template parameter: float is the training
// precision, double is used by gradient-check tests.

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "glta/errors.hpp"
#include "glta/rng.hpp"

namespace glta::nd {

using Shape = std::vector<int64_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

template <class S>
struct TensorData {
  Shape shape;
  std::vector<S> v;
  std::vector<S> g;  // empty until gradient flows in
  bool requires_grad = false;
};

// Value-semantic handle sharing storage, like a shared_ptr. Safe for
// concurrent reads; writes are single-owner by contract.
template <class S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto d = std::make_shared<TensorData<S>>();
    d->shape = std::move(shape);
    d->v.assign(static_cast<size_t>(shape_numel(d->shape)), S(0));
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
  }

  static Tensor full(Shape shape, S value, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (S& x : t.values()) x = value;
    return t;
  }

  static Tensor from(Shape shape, std::vector<S> values, bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
      throw DimensionError("tensor: " + std::to_string(values.size()) +
                           " values do not fill shape " + shape_str(shape));
    auto d = std::make_shared<TensorData<S>>();
    d->shape = std::move(shape);
    d->v = std::move(values);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
  }

  static Tensor randn(Rng& rng, Shape shape, double stddev, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (S& x : t.values()) x = static_cast<S>(rng.normal(0.0, stddev));
    return t;
  }

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  int64_t numel() const { return static_cast<int64_t>(d_->v.size()); }
  int64_t ndim() const { return static_cast<int64_t>(d_->shape.size()); }

  // 2D views: a rank-1 tensor acts as a single row.
  int64_t rows() const { return ndim() == 1 ? 1 : d_->shape[0]; }
  int64_t cols() const { return ndim() == 1 ? d_->shape[0] : d_->shape[1]; }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool rg) { d_->requires_grad = rg; }

  std::vector<S>& values() { return d_->v; }
  const std::vector<S>& values() const { return d_->v; }

  bool has_grad() const { return !d_->g.empty(); }
  std::vector<S>& grad() {
    if (d_->g.empty()) throw ContractError("tensor: gradient buffer absent");
    return d_->g;
  }
  const std::vector<S>& grad() const {
    if (d_->g.empty()) throw ContractError("tensor: gradient buffer absent");
    return d_->g;
  }

  void ensure_grad() {
    if (!d_->requires_grad)
      throw ContractError("tensor: cannot allocate gradient for requires_grad=false tensor");
    if (d_->g.empty()) d_->g.assign(d_->v.size(), S(0));
  }
  void zero_grad() {
    if (!d_->g.empty()) std::fill(d_->g.begin(), d_->g.end(), S(0));
  }
  void drop_grad() {
    d_->g.clear();
    d_->g.shrink_to_fit();
  }

  S& at(int64_t r, int64_t c) { return d_->v[static_cast<size_t>(r * cols() + c)]; }
  S at(int64_t r, int64_t c) const { return d_->v[static_cast<size_t>(r * cols() + c)]; }

  S scalar_value() const {
    if (numel() != 1) throw ContractError("tensor: scalar_value on non-scalar " + shape_str(shape()));
    return d_->v[0];
  }

  Tensor clone() const {
    auto d = std::make_shared<TensorData<S>>();
    d->shape = d_->shape;
    d->v = d_->v;
    d->requires_grad = d_->requires_grad;
    return Tensor(std::move(d));
  }

  uint64_t checksum() const {
    return fnv1a64_bytes(d_->v.data(), d_->v.size() * sizeof(S));
  }

  TensorData<S>* raw() const { return d_.get(); }
  std::weak_ptr<TensorData<S>> weak() const { return d_; }
  bool same_storage(const Tensor& o) const { return d_.get() == o.d_.get(); }

 private:
  explicit Tensor(std::shared_ptr<TensorData<S>> d) : d_(std::move(d)) {}
  std::shared_ptr<TensorData<S>> d_;
};

// Ordered record of executed operations. Backward replays the closures in
// reverse execution order, which is a reverse topological order of the graph.
template <class S>
class Tape {
 public:
  void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }
  size_t size() const { return nodes_.size(); }
  void clear() {
    nodes_.clear();
    nodes_.shrink_to_fit();
  }

  void set_check_numerics(bool on) { check_numerics_ = on; }
  bool check_numerics() const { return check_numerics_; }

  void backward(Tensor<S> loss) {
    if (!loss.defined() || loss.numel() != 1)
      throw ContractError("backward: loss must be a defined scalar tensor");
    if (!loss.requires_grad()) return;  // not connected to any trainable input
    loss.ensure_grad();
    loss.grad()[0] += S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> nodes_;
  bool check_numerics_ = false;
};

namespace detail {

template <class S>
inline void check_finite(const Tape<S>* tape, const char* op, const Tensor<S>& t) {
  if (!tape || !tape->check_numerics()) return;
  for (S x : t.values())
    if (!std::isfinite(static_cast<double>(x)))
      throw NumericError(std::string(op) + ": non-finite input value");
}

template <class S>
inline bool track(const Tape<S>* tape, std::initializer_list<bool> rgs) {
  if (!tape) return false;
  for (bool r : rgs)
    if (r) return true;
  return false;
}

template <class S>
inline void require_2d(const char* op, const Tensor<S>& t) {
  if (t.ndim() != 2)
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul: C = A * B, dA = dC * B^T, dB = A^T * dC
// ---------------------------------------------------------------------------
template <class S>
Tensor<S> matmul(Tape<S>* tape, Tensor<S> a, Tensor<S> b) {
  detail::require_2d("matmul", a);
  detail::require_2d("matmul", b);
  if (a.shape()[1] != b.shape()[0])
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  detail::check_finite(tape, "matmul", a);
  detail::check_finite(tape, "matmul", b);
  const int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor<S> out = Tensor<S>::zeros({m, n});
  {
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t p = 0; p < k; ++p) {
        const S aip = av[i * k + p];
        const S* brow = &bv[p * n];
        S* orow = &ov[i * n];
        for (int64_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
      }
  }
  if (detail::track(tape, {a.requires_grad(), b.requires_grad()})) {
    out.set_requires_grad(true);
    tape->record([a, b, out, m, k, n]() mutable {
      if (!out.has_grad()) return;
      const auto& go = out.grad();
      if (a.requires_grad()) {
        a.ensure_grad();
        auto& ga = a.grad();
        const auto& bv = b.values();
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < n; ++j) {
            const S g = go[i * n + j];
            const S* brow = &bv[j];  // column j strided by n
            for (int64_t p = 0; p < k; ++p) ga[i * k + p] += g * brow[p * n];
          }
      }
      if (b.requires_grad()) {
        b.ensure_grad();
        auto& gb = b.grad();
        const auto& av = a.values();
        for (int64_t i = 0; i < m; ++i)
          for (int64_t p = 0; p < k; ++p) {
            const S aip = av[i * k + p];
            const S* grow = &go[i * n];
            S* gbrow = &gb[p * n];
            for (int64_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
          }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// add: same shape, or b broadcast over rows of a (bias row)
// ---------------------------------------------------------------------------
template <class S>
Tensor<S> add(Tape<S>* tape, Tensor<S> a, Tensor<S> b) {
  bool bcast;
  if (a.shape() == b.shape()) {
    bcast = false;
  } else if (a.ndim() == 2 && b.cols() == a.shape()[1] && b.rows() == 1) {
    bcast = true;
  } else {
    throw DimensionError("add: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  detail::check_finite(tape, "add", a);
  detail::check_finite(tape, "add", b);
  const int64_t rows = a.rows(), cols = a.cols();
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  {
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (int64_t i = 0; i < rows; ++i)
      for (int64_t j = 0; j < cols; ++j)
        ov[i * cols + j] = av[i * cols + j] + bv[bcast ? j : i * cols + j];
  }
  if (detail::track(tape, {a.requires_grad(), b.requires_grad()})) {
    out.set_requires_grad(true);
    tape->record([a, b, out, rows, cols, bcast]() mutable {
      if (!out.has_grad()) return;
      const auto& go = out.grad();
      if (a.requires_grad()) {
        a.ensure_grad();
        auto& ga = a.grad();
        for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        b.ensure_grad();
        auto& gb = b.grad();
        if (bcast) {
          for (int64_t i = 0; i < rows; ++i)
            for (int64_t j = 0; j < cols; ++j) gb[j] += go[i * cols + j];
        } else {
          for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// sub: elementwise a - b, same shape
// ---------------------------------------------------------------------------
template <class S>
Tensor<S> sub(Tape<S>* tape, Tensor<S> a, Tensor<S> b) {
  if (a.shape() != b.shape())
    throw DimensionError("sub: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  detail::check_finite(tape, "sub", a);
  detail::check_finite(tape, "sub", b);
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  for (size_t i = 0; i < out.values().size(); ++i)
    out.values()[i] = a.values()[i] - b.values()[i];
  if (detail::track(tape, {a.requires_grad(), b.requires_grad()})) {
    out.set_requires_grad(true);
    tape->record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      const auto& go = out.grad();
      if (a.requires_grad()) {
        a.ensure_grad();
        for (size_t i = 0; i < go.size(); ++i) a.grad()[i] += go[i];
      }
      if (b.requires_grad()) {
        b.ensure_grad();
        for (size_t i = 0; i < go.size(); ++i) b.grad()[i] -= go[i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// mul: elementwise hadamard product, same shape
// ---------------------------------------------------------------------------
template <class S>
Tensor<S> mul(Tape<S>* tape, Tensor<S> a, Tensor<S> b) {
  if (a.shape() != b.shape())
    throw DimensionError("mul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  detail::check_finite(tape, "mul", a);
  detail::check_finite(tape, "mul", b);
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  for (size_t i = 0; i < out.values().size(); ++i)
    out.values()[i] = a.values()[i] * b.values()[i];
  if (detail::track(tape, {a.requires_grad(), b.requires_grad()})) {
    out.set_requires_grad(true);
    tape->record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      const auto& go = out.grad();
      if (a.requires_grad()) {
        a.ensure_grad();
        for (size_t i = 0; i < go.size(); ++i) a.grad()[i] += go[i] * b.values()[i];
      }
      if (b.requires_grad()) {
        b.ensure_grad();
        for (size_t i = 0; i < go.size(); ++i) b.grad()[i] += go[i] * a.values()[i];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> mul_scalar(Tape<S>* tape, Tensor<S> a, double c) {
  detail::check_finite(tape, "mul_scalar", a);
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  for (size_t i = 0; i < out.values().size(); ++i)
    out.values()[i] = a.values()[i] * static_cast<S>(c);
  if (detail::track(tape, {a.requires_grad()})) {
    out.set_requires_grad(true);
    tape->record([a, out, c]() mutable {
      if (!out.has_grad()) return;
      a.ensure_grad();
      const auto& go = out.grad();
      for (size_t i = 0; i < go.size(); ++i) a.grad()[i] += go[i] * static_cast<S>(c);
    });
  }
  return out;
}

namespace detail {

template <class S, class F, class DF>
Tensor<S> unary_op(Tape<S>* tape, Tensor<S> a, const char* name, F fwd, DF dfdx) {
  check_finite(tape, name, a);
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  for (size_t i = 0; i < out.values().size(); ++i) out.values()[i] = fwd(a.values()[i]);
  if (track(tape, {a.requires_grad()})) {
    out.set_requires_grad(true);
    tape->record([a, out, dfdx]() mutable {
      if (!out.has_grad()) return;
      a.ensure_grad();
      const auto& go = out.grad();
      for (size_t i = 0; i < go.size(); ++i) a.grad()[i] += go[i] * dfdx(a.values()[i]);
    });
  }
  return out;
}

}  // namespace detail

template <class S>
Tensor<S> relu(Tape<S>* tape, Tensor<S> a) {
  return detail::unary_op(
      tape, a, "relu", [](S x) { return x > S(0) ? x : S(0); },
      [](S x) { return x > S(0) ? S(1) : S(0); });
}

// Exact GELU: x * Phi(x).
template <class S>
Tensor<S> gelu(Tape<S>* tape, Tensor<S> a) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  return detail::unary_op(
      tape, a, "gelu",
      [](S x) {
        const double xd = static_cast<double>(x);
        return static_cast<S>(xd * 0.5 * (1.0 + std::erf(xd * inv_sqrt2)));
      },
      [](S x) {
        const double xd = static_cast<double>(x);
        const double phi = 0.5 * (1.0 + std::erf(xd * inv_sqrt2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * xd * xd);
        return static_cast<S>(phi + xd * pdf);
      });
}

// softplus(x) = log(1 + e^x), computed stably.
template <class S>
Tensor<S> softplus(Tape<S>* tape, Tensor<S> a) {
  return detail::unary_op(
      tape, a, "softplus",
      [](S x) {
        const double xd = static_cast<double>(x);
        return static_cast<S>(std::max(xd, 0.0) + std::log1p(std::exp(-std::fabs(xd))));
      },
      [](S x) {
        const double xd = static_cast<double>(x);
        if (xd >= 0.0) return static_cast<S>(1.0 / (1.0 + std::exp(-xd)));
        const double e = std::exp(xd);
        return static_cast<S>(e / (1.0 + e));
      });
}

// ---------------------------------------------------------------------------
// layernorm over the last dimension, then affine scale.
// A constant row normalizes to zero before the affine (epsilon guards the
// zero-variance case).
// ---------------------------------------------------------------------------
inline constexpr double kLayerNormEps = 1e-5;

template <class S>
Tensor<S> layernorm(Tape<S>* tape, Tensor<S> a, Tensor<S> gamma, Tensor<S> beta) {
  detail::require_2d("layernorm", a);
  const int64_t rows = a.shape()[0], cols = a.shape()[1];
  if (gamma.numel() != cols || beta.numel() != cols)
    throw DimensionError("layernorm: scale/shift width mismatch with " + shape_str(a.shape()));
  detail::check_finite(tape, "layernorm", a);
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  auto xhat = std::make_shared<std::vector<S>>(static_cast<size_t>(rows * cols));
  auto inv_std = std::make_shared<std::vector<S>>(static_cast<size_t>(rows));
  {
    const auto& av = a.values();
    const auto& gv = gamma.values();
    const auto& bv = beta.values();
    auto& ov = out.values();
    for (int64_t i = 0; i < rows; ++i) {
      S mean = S(0);
      for (int64_t j = 0; j < cols; ++j) mean += av[i * cols + j];
      mean /= static_cast<S>(cols);
      S var = S(0);
      for (int64_t j = 0; j < cols; ++j) {
        const S d = av[i * cols + j] - mean;
        var += d * d;
      }
      var /= static_cast<S>(cols);
      const S inv = S(1) / std::sqrt(var + static_cast<S>(kLayerNormEps));
      (*inv_std)[i] = inv;
      for (int64_t j = 0; j < cols; ++j) {
        const S xh = (av[i * cols + j] - mean) * inv;
        (*xhat)[i * cols + j] = xh;
        ov[i * cols + j] = xh * gv[j] + bv[j];
      }
    }
  }
  if (detail::track(tape, {a.requires_grad(), gamma.requires_grad(), beta.requires_grad()})) {
    out.set_requires_grad(true);
    tape->record([a, gamma, beta, out, xhat, inv_std, rows, cols]() mutable {
      if (!out.has_grad()) return;
      const auto& go = out.grad();
      const auto& gv = gamma.values();
      if (gamma.requires_grad()) {
        gamma.ensure_grad();
        for (int64_t i = 0; i < rows; ++i)
          for (int64_t j = 0; j < cols; ++j)
            gamma.grad()[j] += go[i * cols + j] * (*xhat)[i * cols + j];
      }
      if (beta.requires_grad()) {
        beta.ensure_grad();
        for (int64_t i = 0; i < rows; ++i)
          for (int64_t j = 0; j < cols; ++j) beta.grad()[j] += go[i * cols + j];
      }
      if (a.requires_grad()) {
        a.ensure_grad();
        auto& ga = a.grad();
        for (int64_t i = 0; i < rows; ++i) {
          S sum_dxh = S(0), sum_dxh_xh = S(0);
          for (int64_t j = 0; j < cols; ++j) {
            const S dxh = go[i * cols + j] * gv[j];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * (*xhat)[i * cols + j];
          }
          const S inv = (*inv_std)[i];
          const S n = static_cast<S>(cols);
          for (int64_t j = 0; j < cols; ++j) {
            const S dxh = go[i * cols + j] * gv[j];
            ga[i * cols + j] +=
                inv * (dxh - sum_dxh / n - (*xhat)[i * cols + j] * sum_dxh_xh / n);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// softmax over each row, max-subtracted for stability.
// ---------------------------------------------------------------------------
template <class S>
Tensor<S> softmax_rows(Tape<S>* tape, Tensor<S> a) {
  detail::require_2d("softmax_rows", a);
  detail::check_finite(tape, "softmax_rows", a);
  const int64_t rows = a.shape()[0], cols = a.shape()[1];
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  {
    const auto& av = a.values();
    auto& ov = out.values();
    for (int64_t i = 0; i < rows; ++i) {
      S mx = av[i * cols];
      for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, av[i * cols + j]);
      S sum = S(0);
      for (int64_t j = 0; j < cols; ++j) {
        const S e = std::exp(av[i * cols + j] - mx);
        ov[i * cols + j] = e;
        sum += e;
      }
      for (int64_t j = 0; j < cols; ++j) ov[i * cols + j] /= sum;
    }
  }
  if (detail::track(tape, {a.requires_grad()})) {
    out.set_requires_grad(true);
    tape->record([a, out, rows, cols]() mutable {
      if (!out.has_grad()) return;
      a.ensure_grad();
      const auto& go = out.grad();
      const auto& p = out.values();
      for (int64_t i = 0; i < rows; ++i) {
        S dot = S(0);
        for (int64_t j = 0; j < cols; ++j) dot += go[i * cols + j] * p[i * cols + j];
        for (int64_t j = 0; j < cols; ++j)
          a.grad()[i * cols + j] += p[i * cols + j] * (go[i * cols + j] - dot);
      }
    });
  }
  return out;
}

// Causal variant for square attention score matrices: row i normalizes over
// columns 0..i, later columns are structurally zero.
template <class S>
Tensor<S> causal_softmax_rows(Tape<S>* tape, Tensor<S> a) {
  detail::require_2d("causal_softmax_rows", a);
  if (a.shape()[0] != a.shape()[1])
    throw DimensionError("causal_softmax_rows: expected square scores, got " +
                         shape_str(a.shape()));
  detail::check_finite(tape, "causal_softmax_rows", a);
  const int64_t n = a.shape()[0];
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  {
    const auto& av = a.values();
    auto& ov = out.values();
    for (int64_t i = 0; i < n; ++i) {
      S mx = av[i * n];
      for (int64_t j = 1; j <= i; ++j) mx = std::max(mx, av[i * n + j]);
      S sum = S(0);
      for (int64_t j = 0; j <= i; ++j) {
        const S e = std::exp(av[i * n + j] - mx);
        ov[i * n + j] = e;
        sum += e;
      }
      for (int64_t j = 0; j <= i; ++j) ov[i * n + j] /= sum;
    }
  }
  if (detail::track(tape, {a.requires_grad()})) {
    out.set_requires_grad(true);
    tape->record([a, out, n]() mutable {
      if (!out.has_grad()) return;
      a.ensure_grad();
      const auto& go = out.grad();
      const auto& p = out.values();
      for (int64_t i = 0; i < n; ++i) {
        S dot = S(0);
        for (int64_t j = 0; j <= i; ++j) dot += go[i * n + j] * p[i * n + j];
        for (int64_t j = 0; j <= i; ++j)
          a.grad()[i * n + j] += p[i * n + j] * (go[i * n + j] - dot);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// cross_entropy: mean over rows of -log softmax(logits)[row, target]
// ---------------------------------------------------------------------------
template <class S>
Tensor<S> cross_entropy(Tape<S>* tape, Tensor<S> logits, std::vector<int32_t> targets) {
  detail::require_2d("cross_entropy", logits);
  const int64_t n = logits.shape()[0], c = logits.shape()[1];
  if (static_cast<int64_t>(targets.size()) != n)
    throw ContractError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                        std::to_string(n) + " rows");
  for (int64_t i = 0; i < n; ++i)
    if (targets[i] < 0 || targets[i] >= c)
      throw IndexError("cross_entropy: target " + std::to_string(targets[i]) +
                       " out of range at row " + std::to_string(i) + " (" + std::to_string(c) +
                       " classes)");
  detail::check_finite(tape, "cross_entropy", logits);
  auto probs = std::make_shared<std::vector<S>>(static_cast<size_t>(n * c));
  S total = S(0);
  {
    const auto& zv = logits.values();
    for (int64_t i = 0; i < n; ++i) {
      S mx = zv[i * c];
      for (int64_t j = 1; j < c; ++j) mx = std::max(mx, zv[i * c + j]);
      S sum = S(0);
      for (int64_t j = 0; j < c; ++j) {
        const S e = std::exp(zv[i * c + j] - mx);
        (*probs)[i * c + j] = e;
        sum += e;
      }
      for (int64_t j = 0; j < c; ++j) (*probs)[i * c + j] /= sum;
      total += std::log(sum) + mx - zv[i * c + targets[i]];
    }
  }
  Tensor<S> out = Tensor<S>::from({1}, {total / static_cast<S>(n)});
  if (detail::track(tape, {logits.requires_grad()})) {
    out.set_requires_grad(true);
    tape->record([logits, out, probs, targets, n, c]() mutable {
      if (!out.has_grad()) return;
      logits.ensure_grad();
      const S g = out.grad()[0] / static_cast<S>(n);
      auto& gl = logits.grad();
      for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < c; ++j) gl[i * c + j] += g * (*probs)[i * c + j];
        gl[i * c + targets[i]] -= g;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// row selection and assembly
// ---------------------------------------------------------------------------
template <class S>
Tensor<S> gather_rows(Tape<S>* tape, Tensor<S> a, std::vector<int32_t> idx) {
  detail::require_2d("gather_rows", a);
  const int64_t m = a.shape()[0], n = a.shape()[1];
  for (int32_t i : idx)
    if (i < 0 || i >= m)
      throw IndexError("gather_rows: row " + std::to_string(i) + " out of range (" +
                       std::to_string(m) + " rows)");
  detail::check_finite(tape, "gather_rows", a);
  Tensor<S> out = Tensor<S>::zeros({static_cast<int64_t>(idx.size()), n});
  {
    const auto& av = a.values();
    auto& ov = out.values();
    for (size_t t = 0; t < idx.size(); ++t)
      std::copy(&av[static_cast<size_t>(idx[t]) * n], &av[static_cast<size_t>(idx[t]) * n] + n,
                &ov[t * n]);
  }
  if (detail::track(tape, {a.requires_grad()})) {
    out.set_requires_grad(true);
    tape->record([a, out, idx, n]() mutable {
      if (!out.has_grad()) return;
      a.ensure_grad();
      const auto& go = out.grad();
      auto& ga = a.grad();
      for (size_t t = 0; t < idx.size(); ++t)
        for (int64_t j = 0; j < n; ++j) ga[static_cast<size_t>(idx[t]) * n + j] += go[t * n + j];
    });
  }
  return out;
}

// One source row per output position; gradients scatter back into each source.
template <class S>
struct RowRef {
  Tensor<S> source;
  int64_t row = 0;
};

template <class S>
Tensor<S> assemble_rows(Tape<S>* tape, std::vector<RowRef<S>> refs, int64_t width) {
  Tensor<S> out = Tensor<S>::zeros({static_cast<int64_t>(refs.size()), width});
  bool any_rg = false;
  for (size_t t = 0; t < refs.size(); ++t) {
    const auto& r = refs[t];
    if (!r.source.defined())
      throw ContractError("assemble_rows: undefined source at position " + std::to_string(t));
    if (r.source.cols() != width)
      throw DimensionError("assemble_rows: source width " + std::to_string(r.source.cols()) +
                           " != " + std::to_string(width) + " at position " + std::to_string(t));
    if (r.row < 0 || r.row >= r.source.rows())
      throw IndexError("assemble_rows: row " + std::to_string(r.row) +
                       " out of range at position " + std::to_string(t));
    const auto& sv = r.source.values();
    std::copy(&sv[static_cast<size_t>(r.row) * width],
              &sv[static_cast<size_t>(r.row) * width] + width,
              &out.values()[t * static_cast<size_t>(width)]);
    any_rg = any_rg || r.source.requires_grad();
  }
  if (tape && any_rg) {
    out.set_requires_grad(true);
    tape->record([refs, out, width]() mutable {
      if (!out.has_grad()) return;
      const auto& go = out.grad();
      for (size_t t = 0; t < refs.size(); ++t) {
        auto& r = refs[t];
        if (!r.source.requires_grad()) continue;
        r.source.ensure_grad();
        auto& gs = r.source.grad();
        for (int64_t j = 0; j < width; ++j)
          gs[static_cast<size_t>(r.row) * width + j] += go[t * static_cast<size_t>(width) + j];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> slice_cols(Tape<S>* tape, Tensor<S> a, int64_t start, int64_t width) {
  detail::require_2d("slice_cols", a);
  const int64_t m = a.shape()[0], n = a.shape()[1];
  if (start < 0 || width <= 0 || start + width > n)
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", " +
                         std::to_string(start + width) + ") out of " + shape_str(a.shape()));
  Tensor<S> out = Tensor<S>::zeros({m, width});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < width; ++j) out.values()[i * width + j] = a.values()[i * n + start + j];
  if (detail::track(tape, {a.requires_grad()})) {
    out.set_requires_grad(true);
    tape->record([a, out, start, width, m, n]() mutable {
      if (!out.has_grad()) return;
      a.ensure_grad();
      const auto& go = out.grad();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < width; ++j) a.grad()[i * n + start + j] += go[i * width + j];
    });
  }
  return out;
}

template <class S>
Tensor<S> concat_cols(Tape<S>* tape, std::vector<Tensor<S>> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no parts");
  const int64_t m = parts[0].rows();
  int64_t total = 0;
  bool any_rg = false;
  for (const auto& p : parts) {
    detail::require_2d("concat_cols", p);
    if (p.shape()[0] != m)
      throw DimensionError("concat_cols: row count mismatch " + shape_str(p.shape()));
    total += p.shape()[1];
    any_rg = any_rg || p.requires_grad();
  }
  Tensor<S> out = Tensor<S>::zeros({m, total});
  {
    int64_t off = 0;
    for (const auto& p : parts) {
      const int64_t w = p.shape()[1];
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < w; ++j)
          out.values()[i * total + off + j] = p.values()[i * w + j];
      off += w;
    }
  }
  if (tape && any_rg) {
    out.set_requires_grad(true);
    tape->record([parts, out, m, total]() mutable {
      if (!out.has_grad()) return;
      const auto& go = out.grad();
      int64_t off = 0;
      for (auto& p : parts) {
        const int64_t w = p.shape()[1];
        if (p.requires_grad()) {
          p.ensure_grad();
          auto& gp = p.grad();
          for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < w; ++j) gp[i * w + j] += go[i * total + off + j];
        }
        off += w;
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> transpose(Tape<S>* tape, Tensor<S> a) {
  detail::require_2d("transpose", a);
  const int64_t m = a.shape()[0], n = a.shape()[1];
  Tensor<S> out = Tensor<S>::zeros({n, m});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out.values()[j * m + i] = a.values()[i * n + j];
  if (detail::track(tape, {a.requires_grad()})) {
    out.set_requires_grad(true);
    tape->record([a, out, m, n]() mutable {
      if (!out.has_grad()) return;
      a.ensure_grad();
      const auto& go = out.grad();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) a.grad()[i * n + j] += go[j * m + i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions (index-order accumulation, reproducible)
// ---------------------------------------------------------------------------
template <class S>
Tensor<S> sum_all(Tape<S>* tape, Tensor<S> a) {
  detail::check_finite(tape, "sum_all", a);
  S total = S(0);
  for (S x : a.values()) total += x;
  Tensor<S> out = Tensor<S>::from({1}, {total});
  if (detail::track(tape, {a.requires_grad()})) {
    out.set_requires_grad(true);
    tape->record([a, out]() mutable {
      if (!out.has_grad()) return;
      a.ensure_grad();
      const S g = out.grad()[0];
      for (S& gx : a.grad()) gx += g;
    });
  }
  return out;
}

template <class S>
Tensor<S> mean_all(Tape<S>* tape, Tensor<S> a) {
  detail::check_finite(tape, "mean_all", a);
  const int64_t n = a.numel();
  S total = S(0);
  for (S x : a.values()) total += x;
  Tensor<S> out = Tensor<S>::from({1}, {total / static_cast<S>(n)});
  if (detail::track(tape, {a.requires_grad()})) {
    out.set_requires_grad(true);
    tape->record([a, out, n]() mutable {
      if (!out.has_grad()) return;
      a.ensure_grad();
      const S g = out.grad()[0] / static_cast<S>(n);
      for (S& gx : a.grad()) gx += g;
    });
  }
  return out;
}

template <class S>
Tensor<S> sum_rows(Tape<S>* tape, Tensor<S> a) {
  detail::require_2d("sum_rows", a);
  detail::check_finite(tape, "sum_rows", a);
  const int64_t m = a.shape()[0], n = a.shape()[1];
  Tensor<S> out = Tensor<S>::zeros({m, 1});
  for (int64_t i = 0; i < m; ++i) {
    S s = S(0);
    for (int64_t j = 0; j < n; ++j) s += a.values()[i * n + j];
    out.values()[i] = s;
  }
  if (detail::track(tape, {a.requires_grad()})) {
    out.set_requires_grad(true);
    tape->record([a, out, m, n]() mutable {
      if (!out.has_grad()) return;
      a.ensure_grad();
      const auto& go = out.grad();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) a.grad()[i * n + j] += go[i];
    });
  }
  return out;
}

}  // namespace glta::nd

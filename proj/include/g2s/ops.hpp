#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "g2s/autodiff.hpp"
#include "g2s/rng.hpp"

namespace g2s {

namespace detail {

template <typename T>
using EigenMat =
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using CEigenMat =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename T>
void require_rank(const Variable<T>& v, size_t r, const char* op) {
  if (v.shape().size() != r)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                     shape_str(v.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise (broadcasting) arithmetic

template <typename T>
Variable<T> add(const Variable<T>& a, const Variable<T>& b) {
  Tensor<T> y = broadcast_binary(a.value(), b.value(), "add", [](T x, T z) { return x + z; });
  return detail::make_result<T>(std::move(y), {&a, &b}, "add", [&](const auto& out) {
    return [a, b, out]() {
      detail::accum_if_needed(a, reduce_to_shape(out->grad, a.shape()));
      detail::accum_if_needed(b, reduce_to_shape(out->grad, b.shape()));
    };
  });
}

template <typename T>
Variable<T> sub(const Variable<T>& a, const Variable<T>& b) {
  Tensor<T> y = broadcast_binary(a.value(), b.value(), "sub", [](T x, T z) { return x - z; });
  return detail::make_result<T>(std::move(y), {&a, &b}, "sub", [&](const auto& out) {
    return [a, b, out]() {
      detail::accum_if_needed(a, reduce_to_shape(out->grad, a.shape()));
      if (b.node()->grad_connected()) {
        Tensor<T> g = reduce_to_shape(out->grad, b.shape());
        for (int64_t i = 0; i < g.numel(); ++i) g[i] = -g[i];
        b.node()->accumulate(g);
      }
    };
  });
}

template <typename T>
Variable<T> mul(const Variable<T>& a, const Variable<T>& b) {
  Tensor<T> y = broadcast_binary(a.value(), b.value(), "mul", [](T x, T z) { return x * z; });
  return detail::make_result<T>(std::move(y), {&a, &b}, "mul", [&](const auto& out) {
    return [a, b, out]() {
      if (a.node()->grad_connected()) {
        Tensor<T> g = broadcast_binary(out->grad, b.value(), "mul", [](T x, T z) { return x * z; });
        a.node()->accumulate(reduce_to_shape(g, a.shape()));
      }
      if (b.node()->grad_connected()) {
        Tensor<T> g = broadcast_binary(out->grad, a.value(), "mul", [](T x, T z) { return x * z; });
        b.node()->accumulate(reduce_to_shape(g, b.shape()));
      }
    };
  });
}

// y = scale * x + shift, both compile-time constants w.r.t. differentiation
template <typename T>
Variable<T> affine(const Variable<T>& x, T scale, T shift) {
  Tensor<T> y = x.value();
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = scale * y[i] + shift;
  return detail::make_result<T>(std::move(y), {&x}, "affine", [&](const auto& out) {
    return [x, scale, out]() {
      Tensor<T> g = out->grad;
      for (int64_t i = 0; i < g.numel(); ++i) g[i] *= scale;
      detail::accum_if_needed(x, g);
    };
  });
}

template <typename T>
Variable<T> scale(const Variable<T>& x, T c) {
  return affine(x, c, T(0));
}

template <typename T>
Variable<T> neg(const Variable<T>& x) {
  return affine(x, T(-1), T(0));
}

// ---------------------------------------------------------------------------
// unary nonlinearities

namespace detail {

template <typename T, typename FwdF, typename BwdF>
Variable<T> unary_op(const Variable<T>& x, const char* op, FwdF&& f, BwdF&& dfdy) {
  Tensor<T> y(x.shape());
  const T* px = x.value().data();
  T* py = y.data();
  for (int64_t i = 0, n = y.numel(); i < n; ++i) py[i] = f(px[i]);
  // dfdy(x_i, y_i) -> local derivative
  return make_result<T>(std::move(y), {&x}, op, [&](const auto& out) {
    return [x, out, dfdy]() {
      Tensor<T> g(x.shape());
      const T* pg = out->grad.data();
      const T* px2 = x.value().data();
      const T* py2 = out->value.data();
      T* pd = g.data();
      for (int64_t i = 0, n = g.numel(); i < n; ++i) pd[i] = pg[i] * dfdy(px2[i], py2[i]);
      accum_if_needed(x, g);
    };
  });
}

}  // namespace detail

template <typename T>
Variable<T> sigmoid(const Variable<T>& x) {
  return detail::unary_op(
      x, "sigmoid", [](T v) { return T(1) / (T(1) + std::exp(-v)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Variable<T> tanh_op(const Variable<T>& x) {
  return detail::unary_op(
      x, "tanh", [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Variable<T> relu(const Variable<T>& x) {
  return detail::unary_op(
      x, "relu", [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Variable<T> log_op(const Variable<T>& x) {
  return detail::unary_op(
      x, "log", [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Variable<T> clamp_min(const Variable<T>& x, T floor) {
  return detail::unary_op(
      x, "clamp_min", [floor](T v) { return v > floor ? v : floor; },
      [floor](T v, T) { return v > floor ? T(1) : T(0); });
}

// ---------------------------------------------------------------------------
// shape manipulation

template <typename T>
Variable<T> reshape(const Variable<T>& x, Shape s) {
  Tensor<T> y = x.value().reshaped(s);
  return detail::make_result<T>(std::move(y), {&x}, "reshape", [&](const auto& out) {
    return [x, out]() { detail::accum_if_needed(x, out->grad.reshaped(x.shape())); };
  });
}

template <typename T>
Variable<T> transpose2d(const Variable<T>& x) {
  detail::require_rank(x, 2, "transpose2d");
  int64_t m = x.shape()[0], n = x.shape()[1];
  Tensor<T> y({n, m});
  detail::CEigenMat<T> X(x.value().data(), m, n);
  detail::EigenMat<T> Y(y.data(), n, m);
  Y = X.transpose();
  return detail::make_result<T>(std::move(y), {&x}, "transpose2d", [&](const auto& out) {
    return [x, out, m, n]() {
      Tensor<T> g({m, n});
      detail::CEigenMat<T> G(out->grad.data(), n, m);
      detail::EigenMat<T> GT(g.data(), m, n);
      GT = G.transpose();
      detail::accum_if_needed(x, g);
    };
  });
}

template <typename T>
Variable<T> slice(const Variable<T>& x, size_t axis, int64_t start, int64_t len) {
  const Shape& xs = x.shape();
  if (axis >= xs.size() || start < 0 || start + len > xs[axis])
    throw ShapeError("slice: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") on axis " + std::to_string(axis) +
                     " of " + shape_str(xs));
  Shape os = xs;
  os[axis] = len;
  int64_t outer = 1, inner = 1;
  for (size_t i = 0; i < axis; ++i) outer *= xs[i];
  for (size_t i = axis + 1; i < xs.size(); ++i) inner *= xs[i];
  Tensor<T> y(os);
  const T* px = x.value().data();
  T* py = y.data();
  for (int64_t o = 0; o < outer; ++o)
    std::copy(px + (o * xs[axis] + start) * inner, px + (o * xs[axis] + start + len) * inner,
              py + o * len * inner);
  return detail::make_result<T>(std::move(y), {&x}, "slice", [&](const auto& out) {
    return [x, out, axis, start, len, outer, inner]() {
      if (!x.node()->grad_connected()) return;
      Tensor<T> g(x.shape());
      const T* pg = out->grad.data();
      T* pd = g.data();
      int64_t ax = x.shape()[axis];
      for (int64_t o = 0; o < outer; ++o)
        std::copy(pg + o * len * inner, pg + (o + 1) * len * inner,
                  pd + (o * ax + start) * inner);
      x.node()->accumulate(g);
    };
  });
}

template <typename T>
Variable<T> concat(const std::vector<Variable<T>>& parts, size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  Shape os = s0;
  os[axis] = 0;
  for (const auto& p : parts) {
    const Shape& ps = p.shape();
    if (ps.size() != s0.size()) throw ShapeError("concat: rank mismatch");
    for (size_t i = 0; i < ps.size(); ++i)
      if (i != axis && ps[i] != s0[i])
        throw ShapeError("concat: shape mismatch " + shape_str(ps) + " vs " + shape_str(s0));
    os[axis] += ps[axis];
  }
  int64_t outer = 1, inner = 1;
  for (size_t i = 0; i < axis; ++i) outer *= os[i];
  for (size_t i = axis + 1; i < os.size(); ++i) inner *= os[i];
  Tensor<T> y(os);
  T* py = y.data();
  int64_t off = 0;
  for (const auto& p : parts) {
    int64_t alen = p.shape()[axis];
    const T* px = p.value().data();
    for (int64_t o = 0; o < outer; ++o)
      std::copy(px + o * alen * inner, px + (o + 1) * alen * inner,
                py + (o * os[axis] + off) * inner);
    off += alen;
  }
  // variadic input list, recorded manually
  auto out = Variable<T>::leaf(std::move(y), false);
  Tape<T>* tape = Tape<T>::current();
  bool connected = false;
  for (const auto& p : parts) connected = connected || p.node()->grad_connected();
  if (tape && connected) {
    const auto& node = out.node();
    node->tape = tape;
    node->entry = tape->record(
        [parts, node, axis, outer, inner, total = os[axis]]() {
          const T* pg = node->grad.data();
          int64_t off2 = 0;
          for (const auto& p : parts) {
            int64_t alen = p.shape()[axis];
            if (p.node()->grad_connected()) {
              Tensor<T> g(p.shape());
              T* pd = g.data();
              for (int64_t o = 0; o < outer; ++o)
                std::copy(pg + (o * total + off2) * inner, pg + (o * total + off2 + alen) * inner,
                          pd + o * alen * inner);
              p.node()->accumulate(g);
            }
            off2 += alen;
          }
        },
        node, "concat");
  }
  return out;
}

template <typename T>
std::vector<Variable<T>> split(const Variable<T>& x, size_t axis,
                               const std::vector<int64_t>& sizes) {
  int64_t sum = std::accumulate(sizes.begin(), sizes.end(), int64_t(0));
  if (axis >= x.shape().size() || sum != x.shape()[axis])
    throw ShapeError("split: sizes sum " + std::to_string(sum) + " != axis extent of " +
                     shape_str(x.shape()));
  std::vector<Variable<T>> out;
  int64_t start = 0;
  for (int64_t len : sizes) {
    out.push_back(slice(x, axis, start, len));
    start += len;
  }
  return out;
}

namespace detail {

// raw axes permutation of a dense tensor: out dim i = in dim perm[i]
template <typename T>
Tensor<T> permute_tensor(const Tensor<T>& x, const std::vector<size_t>& perm) {
  const Shape& xs = x.shape();
  size_t r = xs.size();
  Shape os(r);
  for (size_t i = 0; i < r; ++i) os[i] = xs[perm[i]];
  auto xst = row_major_strides(xs);
  Tensor<T> y(os);
  std::vector<int64_t> idx(r, 0);
  const T* px = x.data();
  T* py = y.data();
  for (int64_t flat = 0, n = y.numel(); flat < n; ++flat) {
    int64_t in = 0;
    for (size_t i = 0; i < r; ++i) in += idx[i] * xst[perm[i]];
    py[flat] = px[in];
    for (int d = int(r) - 1; d >= 0; --d) {
      if (++idx[d] < os[d]) break;
      idx[d] = 0;
    }
  }
  return y;
}

inline std::vector<size_t> inverse_perm(const std::vector<size_t>& perm) {
  std::vector<size_t> inv(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
  return inv;
}

}  // namespace detail

// Axes permutation; gradient is the inverse permutation of the output grad.
template <typename T>
Variable<T> permute(const Variable<T>& x, std::vector<size_t> perm) {
  if (perm.size() != x.shape().size())
    throw ShapeError("permute: axes list does not match rank of " + shape_str(x.shape()));
  Tensor<T> y = detail::permute_tensor(x.value(), perm);
  return detail::make_result<T>(std::move(y), {&x}, "permute", [&](const auto& out) {
    return [x, out, inv = detail::inverse_perm(perm)]() {
      detail::accum_if_needed(x, detail::permute_tensor(out->grad, inv));
    };
  });
}

// ---------------------------------------------------------------------------
// matrix product (2-d); Eigen handles the kernels

template <typename T>
Variable<T> matmul(const Variable<T>& a, const Variable<T>& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  int64_t m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2)
    throw ShapeError("matmul: inner dims of " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ");
  Tensor<T> y({m, n});
  detail::CEigenMat<T> A(a.value().data(), m, k);
  detail::CEigenMat<T> B(b.value().data(), k, n);
  detail::EigenMat<T> Y(y.data(), m, n);
  Y.noalias() = A * B;
  return detail::make_result<T>(std::move(y), {&a, &b}, "matmul", [&](const auto& out) {
    return [a, b, out, m, k, n]() {
      detail::CEigenMat<T> G(out->grad.data(), m, n);
      if (a.node()->grad_connected()) {
        Tensor<T> ga({m, k});
        detail::CEigenMat<T> B2(b.value().data(), k, n);
        detail::EigenMat<T> GA(ga.data(), m, k);
        GA.noalias() = G * B2.transpose();
        a.node()->accumulate(ga);
      }
      if (b.node()->grad_connected()) {
        Tensor<T> gb({k, n});
        detail::CEigenMat<T> A2(a.value().data(), m, k);
        detail::EigenMat<T> GB(gb.data(), k, n);
        GB.noalias() = A2.transpose() * G;
        b.node()->accumulate(gb);
      }
    };
  });
}

// ---------------------------------------------------------------------------
// reductions

template <typename T>
Variable<T> reduce_sum(const Variable<T>& x, size_t axis, bool keepdim = false) {
  const Shape& xs = x.shape();
  if (axis >= xs.size()) throw ShapeError("reduce_sum: bad axis for " + shape_str(xs));
  int64_t outer = 1, inner = 1, ax = xs[axis];
  for (size_t i = 0; i < axis; ++i) outer *= xs[i];
  for (size_t i = axis + 1; i < xs.size(); ++i) inner *= xs[i];
  Shape os;
  for (size_t i = 0; i < xs.size(); ++i) {
    if (i == axis) {
      if (keepdim) os.push_back(1);
    } else {
      os.push_back(xs[i]);
    }
  }
  if (os.empty()) os.push_back(1);
  Tensor<T> y(os);
  const T* px = x.value().data();
  T* py = y.data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t a2 = 0; a2 < ax; ++a2)
      for (int64_t i = 0; i < inner; ++i) py[o * inner + i] += px[(o * ax + a2) * inner + i];
  return detail::make_result<T>(std::move(y), {&x}, "reduce_sum", [&](const auto& out) {
    return [x, out, outer, inner, ax]() {
      if (!x.node()->grad_connected()) return;
      Tensor<T> g(x.shape());
      const T* pg = out->grad.data();
      T* pd = g.data();
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t a2 = 0; a2 < ax; ++a2)
          for (int64_t i = 0; i < inner; ++i) pd[(o * ax + a2) * inner + i] = pg[o * inner + i];
      x.node()->accumulate(g);
    };
  });
}

template <typename T>
Variable<T> sum_all(const Variable<T>& x) {
  T s = T(0);
  const T* px = x.value().data();
  for (int64_t i = 0, n = x.numel(); i < n; ++i) s += px[i];
  return detail::make_result<T>(Tensor<T>::scalar(s), {&x}, "sum_all", [&](const auto& out) {
    return [x, out]() {
      if (!x.node()->grad_connected()) return;
      Tensor<T> g = Tensor<T>::full(x.shape(), out->grad[0]);
      x.node()->accumulate(g);
    };
  });
}

template <typename T>
Variable<T> mean_all(const Variable<T>& x) {
  return scale(sum_all(x), T(1) / T(x.numel()));
}

// ---------------------------------------------------------------------------
// softmax / layer norm / cross entropy

// softmax over `axis` (default last). -inf entries get exactly zero weight.
template <typename T>
Variable<T> softmax(const Variable<T>& x, int axis = -1) {
  size_t r = x.shape().size();
  size_t ax = axis < 0 ? size_t(int(r) + axis) : size_t(axis);
  if (ax >= r) throw ShapeError("softmax: bad axis for " + shape_str(x.shape()));
  if (ax != r - 1) {
    std::vector<size_t> fwd;
    for (size_t i = 0; i < r; ++i)
      if (i != ax) fwd.push_back(i);
    fwd.push_back(ax);
    return permute(softmax(permute(x, fwd), -1), detail::inverse_perm(fwd));
  }
  int64_t cols = x.shape()[r - 1];
  int64_t rows = x.numel() / cols;
  Tensor<T> y(x.shape());
  const T* px = x.value().data();
  T* py = y.data();
  for (int64_t i = 0; i < rows; ++i) {
    const T* row = px + i * cols;
    T* orow = py + i * cols;
    T mx = -std::numeric_limits<T>::infinity();
    for (int64_t j = 0; j < cols; ++j) mx = std::max(mx, row[j]);
    T z = T(0);
    for (int64_t j = 0; j < cols; ++j) {
      T e = std::exp(row[j] - mx);
      orow[j] = e;
      z += e;
    }
    for (int64_t j = 0; j < cols; ++j) orow[j] /= z;
  }
  return detail::make_result<T>(std::move(y), {&x}, "softmax", [&](const auto& out) {
    return [x, out, rows, cols]() {
      if (!x.node()->grad_connected()) return;
      Tensor<T> g(x.shape());
      const T* pg = out->grad.data();
      const T* py2 = out->value.data();
      T* pd = g.data();
      for (int64_t i = 0; i < rows; ++i) {
        const T* yr = py2 + i * cols;
        const T* gr = pg + i * cols;
        T dot = T(0);
        for (int64_t j = 0; j < cols; ++j) dot += yr[j] * gr[j];
        T* dr = pd + i * cols;
        for (int64_t j = 0; j < cols; ++j) dr[j] = yr[j] * (gr[j] - dot);
      }
      x.node()->accumulate(g);
    };
  });
}

// Row-wise normalization over the last axis, no affine part. The learned
// gain/shift are applied by callers with mul/add.
template <typename T>
Variable<T> layer_norm(const Variable<T>& x, T eps = T(1e-5)) {
  size_t r = x.shape().size();
  if (r < 1) throw ShapeError("layer_norm: scalar input");
  int64_t cols = x.shape()[r - 1];
  int64_t rows = x.numel() / cols;
  Tensor<T> y(x.shape());
  Tensor<T> inv_std({rows});
  const T* px = x.value().data();
  T* py = y.data();
  for (int64_t i = 0; i < rows; ++i) {
    const T* row = px + i * cols;
    T mean = T(0);
    for (int64_t j = 0; j < cols; ++j) mean += row[j];
    mean /= T(cols);
    T var = T(0);
    for (int64_t j = 0; j < cols; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= T(cols);
    T is = T(1) / std::sqrt(var + eps);
    inv_std[i] = is;
    T* orow = py + i * cols;
    for (int64_t j = 0; j < cols; ++j) orow[j] = (row[j] - mean) * is;
  }
  return detail::make_result<T>(std::move(y), {&x}, "layer_norm", [&](const auto& out) {
    return [x, out, inv_std, rows, cols]() {
      if (!x.node()->grad_connected()) return;
      Tensor<T> g(x.shape());
      const T* pg = out->grad.data();
      const T* ph = out->value.data();  // normalized activations
      T* pd = g.data();
      for (int64_t i = 0; i < rows; ++i) {
        const T* gr = pg + i * cols;
        const T* hr = ph + i * cols;
        T mg = T(0), mgh = T(0);
        for (int64_t j = 0; j < cols; ++j) {
          mg += gr[j];
          mgh += gr[j] * hr[j];
        }
        mg /= T(cols);
        mgh /= T(cols);
        T* dr = pd + i * cols;
        for (int64_t j = 0; j < cols; ++j) dr[j] = inv_std[i] * (gr[j] - mg - hr[j] * mgh);
      }
      x.node()->accumulate(g);
    };
  });
}

// Mean over rows of -log softmax(logits)[i, target_i].
template <typename T>
Variable<T> cross_entropy(const Variable<T>& logits, const std::vector<int32_t>& targets) {
  detail::require_rank(logits, 2, "cross_entropy");
  int64_t rows = logits.shape()[0], cols = logits.shape()[1];
  if (int64_t(targets.size()) != rows)
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     shape_str(logits.shape()));
  Tensor<T> probs(logits.shape());
  const T* px = logits.value().data();
  T* pp = probs.data();
  T loss = T(0);
  for (int64_t i = 0; i < rows; ++i) {
    const T* row = px + i * cols;
    T mx = row[0];
    for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
    T z = T(0);
    for (int64_t j = 0; j < cols; ++j) {
      T e = std::exp(row[j] - mx);
      pp[i * cols + j] = e;
      z += e;
    }
    for (int64_t j = 0; j < cols; ++j) pp[i * cols + j] /= z;
    int32_t t = targets[i];
    if (t < 0 || t >= cols) throw ShapeError("cross_entropy: target id out of range");
    loss += -(row[t] - mx - std::log(z));
  }
  loss /= T(rows);
  return detail::make_result<T>(Tensor<T>::scalar(loss), {&logits}, "cross_entropy",
                                [&](const auto& out) {
                                  return [logits, out, probs, targets, rows, cols]() {
                                    if (!logits.node()->grad_connected()) return;
                                    Tensor<T> g(logits.shape());
                                    T go = out->grad[0] / T(rows);
                                    const T* pp2 = probs.data();
                                    T* pd = g.data();
                                    for (int64_t i = 0; i < rows; ++i) {
                                      for (int64_t j = 0; j < cols; ++j)
                                        pd[i * cols + j] = pp2[i * cols + j] * go;
                                      pd[i * cols + targets[i]] -= go;
                                    }
                                    logits.node()->accumulate(g);
                                  };
                                });
}

// ---------------------------------------------------------------------------
// lookups / gathers

template <typename T>
Variable<T> embedding_lookup(const Variable<T>& table, const std::vector<int32_t>& ids) {
  detail::require_rank(table, 2, "embedding_lookup");
  int64_t v = table.shape()[0], d = table.shape()[1];
  Tensor<T> y({int64_t(ids.size()), d});
  const T* pt = table.value().data();
  T* py = y.data();
  for (size_t i = 0; i < ids.size(); ++i) {
    int32_t id = ids[i];
    if (id < 0 || id >= v)
      throw ShapeError("embedding_lookup: id " + std::to_string(id) + " outside table " +
                       shape_str(table.shape()));
    std::copy(pt + id * d, pt + (id + 1) * d, py + int64_t(i) * d);
  }
  return detail::make_result<T>(std::move(y), {&table}, "embedding_lookup",
                                [&](const auto& out) {
                                  return [table, out, ids, d]() {
                                    if (!table.node()->grad_connected()) return;
                                    Tensor<T> g(table.shape());
                                    const T* pg = out->grad.data();
                                    T* pd = g.data();
                                    for (size_t i = 0; i < ids.size(); ++i) {
                                      T* dst = pd + int64_t(ids[i]) * d;
                                      const T* src = pg + int64_t(i) * d;
                                      for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
                                    }
                                    table.node()->accumulate(g);
                                  };
                                });
}

// out[r] = sum_{j in [offsets[r], offsets[r+1])} weights[j] * u[indices[j]]
// One primitive covers both "take the sampled path" (single index, weight 1)
// and "average all retained paths" (k indices, weight 1/k).
template <typename T>
Variable<T> weighted_gather(const Variable<T>& u, const std::vector<int64_t>& offsets,
                            const std::vector<int32_t>& indices, const std::vector<T>& weights) {
  detail::require_rank(u, 2, "weighted_gather");
  if (indices.size() != weights.size() || offsets.empty() ||
      offsets.back() != int64_t(indices.size()))
    throw ShapeError("weighted_gather: inconsistent index/weight/offset lists");
  int64_t rows = int64_t(offsets.size()) - 1, d = u.shape()[1], p = u.shape()[0];
  Tensor<T> y({rows, d});
  const T* pu = u.value().data();
  T* py = y.data();
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t j = offsets[r]; j < offsets[r + 1]; ++j) {
      int32_t id = indices[size_t(j)];
      if (id < 0 || id >= p) throw ShapeError("weighted_gather: index out of range");
      T w = weights[size_t(j)];
      const T* src = pu + int64_t(id) * d;
      T* dst = py + r * d;
      for (int64_t k = 0; k < d; ++k) dst[k] += w * src[k];
    }
  }
  return detail::make_result<T>(std::move(y), {&u}, "weighted_gather", [&](const auto& out) {
    return [u, out, offsets, indices, weights, rows, d]() {
      if (!u.node()->grad_connected()) return;
      Tensor<T> g(u.shape());
      const T* pg = out->grad.data();
      T* pd = g.data();
      for (int64_t r = 0; r < rows; ++r) {
        for (int64_t j = offsets[r]; j < offsets[r + 1]; ++j) {
          T w = weights[size_t(j)];
          T* dst = pd + int64_t(indices[size_t(j)]) * d;
          const T* src = pg + r * d;
          for (int64_t k = 0; k < d; ++k) dst[k] += w * src[k];
        }
      }
      u.node()->accumulate(g);
    };
  });
}

// per-row element selection: out[i] = x[i, ids[i]]
template <typename T>
Variable<T> pick(const Variable<T>& x, const std::vector<int32_t>& ids) {
  detail::require_rank(x, 2, "pick");
  int64_t rows = x.shape()[0], cols = x.shape()[1];
  if (int64_t(ids.size()) != rows) throw ShapeError("pick: id count mismatch");
  Tensor<T> y({rows});
  for (int64_t i = 0; i < rows; ++i) {
    if (ids[i] < 0 || ids[i] >= cols) throw ShapeError("pick: id out of range");
    y[i] = x.value()[i * cols + ids[i]];
  }
  return detail::make_result<T>(std::move(y), {&x}, "pick", [&](const auto& out) {
    return [x, out, ids, rows, cols]() {
      if (!x.node()->grad_connected()) return;
      Tensor<T> g(x.shape());
      for (int64_t i = 0; i < rows; ++i) g[i * cols + ids[i]] = out->grad[i];
      x.node()->accumulate(g);
    };
  });
}

// ---------------------------------------------------------------------------
// dropout

// Inverted dropout with a counter-based mask: the same (p, seed) always
// produces the same mask, so training steps replay exactly.
template <typename T>
Variable<T> dropout(const Variable<T>& x, T p, uint64_t seed) {
  if (p < T(0) || p >= T(1)) throw ShapeError("dropout: p must be in [0,1)");
  if (p == T(0)) return x;
  Rng rng(seed);
  Tensor<T> mask(x.shape());
  T keep = T(1) - p;
  for (int64_t i = 0, n = mask.numel(); i < n; ++i)
    mask[i] = rng.next_double() < double(p) ? T(0) : T(1) / keep;
  Tensor<T> y(x.shape());
  const T* px = x.value().data();
  T* py = y.data();
  for (int64_t i = 0, n = y.numel(); i < n; ++i) py[i] = px[i] * mask[i];
  return detail::make_result<T>(std::move(y), {&x}, "dropout", [&](const auto& out) {
    return [x, out, mask]() {
      if (!x.node()->grad_connected()) return;
      Tensor<T> g(x.shape());
      const T* pg = out->grad.data();
      T* pd = g.data();
      for (int64_t i = 0, n = g.numel(); i < n; ++i) pd[i] = pg[i] * mask[i];
      x.node()->accumulate(g);
    };
  });
}

// ---------------------------------------------------------------------------
// conv1d / max_pool1d (for the character CNNs)

// x: [B, L, Cin], w: [K*Cin, Cout], valid padding, stride 1 -> [B, L-K+1, Cout]
template <typename T>
Variable<T> conv1d(const Variable<T>& x, const Variable<T>& w, int64_t k) {
  detail::require_rank(x, 3, "conv1d");
  detail::require_rank(w, 2, "conv1d");
  int64_t b = x.shape()[0], l = x.shape()[1], cin = x.shape()[2];
  int64_t cout = w.shape()[1];
  if (w.shape()[0] != k * cin)
    throw ShapeError("conv1d: weight " + shape_str(w.shape()) + " incompatible with window " +
                     std::to_string(k) + " over input " + shape_str(x.shape()));
  if (l < k) throw ShapeError("conv1d: input length " + std::to_string(l) + " < window");
  int64_t lo = l - k + 1;
  // im2col then one GEMM
  Tensor<T> cols({b * lo, k * cin});
  const T* px = x.value().data();
  T* pc = cols.data();
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t t = 0; t < lo; ++t)
      std::copy(px + (bi * l + t) * cin, px + (bi * l + t + k) * cin,
                pc + (bi * lo + t) * k * cin);
  Tensor<T> y({b, lo, cout});
  detail::CEigenMat<T> C(cols.data(), b * lo, k * cin);
  detail::CEigenMat<T> W(w.value().data(), k * cin, cout);
  detail::EigenMat<T> Y(y.data(), b * lo, cout);
  Y.noalias() = C * W;
  return detail::make_result<T>(std::move(y), {&x, &w}, "conv1d", [&](const auto& out) {
    return [x, w, out, cols, b, l, lo, cin, cout, k]() {
      detail::CEigenMat<T> G(out->grad.data(), b * lo, cout);
      if (w.node()->grad_connected()) {
        Tensor<T> gw(w.shape());
        detail::CEigenMat<T> C2(cols.data(), b * lo, k * cin);
        detail::EigenMat<T> GW(gw.data(), k * cin, cout);
        GW.noalias() = C2.transpose() * G;
        w.node()->accumulate(gw);
      }
      if (x.node()->grad_connected()) {
        Tensor<T> gcols({b * lo, k * cin});
        detail::CEigenMat<T> W2(w.value().data(), k * cin, cout);
        detail::EigenMat<T> GC(gcols.data(), b * lo, k * cin);
        GC.noalias() = G * W2.transpose();
        Tensor<T> gx(x.shape());
        const T* pgc = gcols.data();
        T* pd = gx.data();
        for (int64_t bi = 0; bi < b; ++bi)
          for (int64_t t = 0; t < lo; ++t) {
            const T* src = pgc + (bi * lo + t) * k * cin;
            T* dst = pd + (bi * l + t) * cin;
            for (int64_t j = 0; j < k * cin; ++j) dst[j] += src[j];
          }
        x.node()->accumulate(gx);
      }
    };
  });
}

// x: [B, L, C] -> [B, Lout, C]; window<=0 pools over the whole length.
// Ties route the gradient to the earliest index.
template <typename T>
Variable<T> max_pool1d(const Variable<T>& x, int64_t window = 0, int64_t stride = 0) {
  detail::require_rank(x, 3, "max_pool1d");
  int64_t b = x.shape()[0], l = x.shape()[1], c = x.shape()[2];
  if (window <= 0) window = l;
  if (stride <= 0) stride = window;
  if (window > l) throw ShapeError("max_pool1d: window exceeds length of " + shape_str(x.shape()));
  int64_t lo = (l - window) / stride + 1;
  Tensor<T> y({b, lo, c});
  std::vector<int64_t> argmax(size_t(b * lo * c));
  const T* px = x.value().data();
  T* py = y.data();
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t t = 0; t < lo; ++t)
      for (int64_t ch = 0; ch < c; ++ch) {
        int64_t best = bi * l * c + (t * stride) * c + ch;
        T bv = px[best];
        for (int64_t wv = 1; wv < window; ++wv) {
          int64_t idx = bi * l * c + (t * stride + wv) * c + ch;
          if (px[idx] > bv) {
            bv = px[idx];
            best = idx;
          }
        }
        int64_t oi = (bi * lo + t) * c + ch;
        py[oi] = bv;
        argmax[size_t(oi)] = best;
      }
  return detail::make_result<T>(std::move(y), {&x}, "max_pool1d", [&](const auto& out) {
    return [x, out, argmax]() {
      if (!x.node()->grad_connected()) return;
      Tensor<T> g(x.shape());
      const T* pg = out->grad.data();
      for (size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += pg[int64_t(i)];
      x.node()->accumulate(g);
    };
  });
}

}  // namespace g2s

#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "g2s/errors.hpp"
#include "g2s/rng.hpp"

namespace g2s {

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major n-d array. Plain value type; all autodiff bookkeeping
// lives in the tape, not here.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(numel_of(shape_), T(0)) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (int64_t(data_.size()) != numel_of(shape_))
      throw ShapeError("tensor: data size " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, T v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  static Tensor uniform(Shape shape, Rng& rng, T lo, T hi) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = T(rng.uniform(double(lo), double(hi)));
    return t;
  }

  static Tensor normal(Shape shape, Rng& rng, T mean = T(0), T stddev = T(1)) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = T(rng.normal(double(mean), double(stddev)));
    return t;
  }

  const Shape& shape() const { return shape_; }
  int64_t dim(size_t i) const { return shape_[i]; }
  size_t rank() const { return shape_.size(); }
  int64_t numel() const { return int64_t(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](int64_t i) { return data_[size_t(i)]; }
  const T& operator[](int64_t i) const { return data_[size_t(i)]; }

  T item() const {
    if (numel() != 1) throw ShapeError("item(): tensor has shape " + shape_str(shape_));
    return data_[0];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape s) const {
    if (numel_of(s) != numel())
      throw ShapeError("reshape: cannot view " + shape_str(shape_) + " as " + shape_str(s));
    Tensor out = *this;
    out.shape_ = std::move(s);
    return out;
  }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(double(v))) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (int64_t i = 0; i < numel(); ++i) out[i] = U(data_[size_t(i)]);
    return out;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

// numpy-style broadcast of two shapes; throws on incompatibility
inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (size_t i = 0; i < r; ++i) {
    int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                       shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

inline std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int i = int(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

// Apply a binary elementwise op with broadcasting. fn(a_elem, b_elem) -> out_elem.
template <typename T, typename F>
Tensor<T> broadcast_binary(const Tensor<T>& a, const Tensor<T>& b, const char* op, F&& fn) {
  if (same_shape(a.shape(), b.shape())) {  // fast path
    Tensor<T> out(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (int64_t i = 0, n = a.numel(); i < n; ++i) po[i] = fn(pa[i], pb[i]);
    return out;
  }
  Shape os = broadcast_shape(a.shape(), b.shape(), op);
  Tensor<T> out(os);
  size_t r = os.size();
  auto ost = row_major_strides(os);
  // per-dimension input strides, 0 where the input broadcasts
  std::vector<int64_t> sa(r, 0), sb(r, 0);
  auto ast = row_major_strides(a.shape());
  auto bst = row_major_strides(b.shape());
  for (size_t i = 0; i < a.shape().size(); ++i)
    sa[r - a.shape().size() + i] = a.shape()[i] == 1 ? 0 : ast[i];
  for (size_t i = 0; i < b.shape().size(); ++i)
    sb[r - b.shape().size() + i] = b.shape()[i] == 1 ? 0 : bst[i];
  std::vector<int64_t> idx(r, 0);
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  int64_t ia = 0, ib = 0;
  for (int64_t flat = 0, n = out.numel(); flat < n; ++flat) {
    po[flat] = fn(pa[ia], pb[ib]);
    for (int d = int(r) - 1; d >= 0; --d) {
      idx[d]++;
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < os[d]) break;
      ia -= sa[d] * os[d];
      ib -= sb[d] * os[d];
      idx[d] = 0;
    }
  }
  return out;
}

// Sum `t` down to `target` shape (inverse of broadcasting), used by gradients.
template <typename T>
Tensor<T> reduce_to_shape(const Tensor<T>& t, const Shape& target) {
  if (same_shape(t.shape(), target)) return t;
  size_t r = t.rank();
  Shape padded(r, 1);
  std::copy(target.begin(), target.end(), padded.begin() + (r - target.size()));
  Tensor<T> out(padded);
  auto tst = row_major_strides(t.shape());
  auto ost = row_major_strides(padded);
  std::vector<int64_t> idx(r, 0);
  const T* pt = t.data();
  T* po = out.data();
  int64_t io = 0;
  std::vector<int64_t> so(r, 0);
  for (size_t d = 0; d < r; ++d) so[d] = padded[d] == 1 ? 0 : ost[d];
  for (int64_t flat = 0, n = t.numel(); flat < n; ++flat) {
    po[io] += pt[flat];
    for (int d = int(r) - 1; d >= 0; --d) {
      idx[d]++;
      io += so[d];
      if (idx[d] < t.shape()[d]) break;
      io -= so[d] * t.shape()[d];
      idx[d] = 0;
    }
  }
  return out.reshaped(target);
}

}  // namespace g2s

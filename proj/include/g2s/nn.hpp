#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "g2s/ops.hpp"
#include "g2s/vocab.hpp"

namespace g2s {

// Named trainable leaves in a stable registry order; the order defines the
// checkpoint layout and the optimizer's iteration order. Initialization is
// keyed by (seed, name) so it does not depend on construction order.
template <typename T>
class ParamStore {
 public:
  explicit ParamStore(uint64_t init_seed = 0) : init_seed_(init_seed) {}

  Variable<T> zeros(const std::string& name, Shape shape) {
    return put(name, Tensor<T>(std::move(shape)));
  }

  Variable<T> ones(const std::string& name, Shape shape) {
    return put(name, Tensor<T>::full(std::move(shape), T(1)));
  }

  // Glorot-uniform for projection matrices [in, out]
  Variable<T> xavier(const std::string& name, int64_t in, int64_t out) {
    Rng rng(sub_seed(init_seed_, "init", name));
    T lim = T(std::sqrt(6.0 / double(in + out)));
    return put(name, Tensor<T>::uniform({in, out}, rng, -lim, lim));
  }

  // N(0, 1/sqrt(d)) for embedding tables [v, d]
  Variable<T> embedding(const std::string& name, int64_t v, int64_t d) {
    Rng rng(sub_seed(init_seed_, "init", name));
    return put(name, Tensor<T>::normal({v, d}, rng, T(0), T(1.0 / std::sqrt(double(d)))));
  }

  Variable<T> get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("no parameter named " + name);
    return items_[it->second].second;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const std::vector<std::pair<std::string, Variable<T>>>& items() const { return items_; }

  void zero_grad() {
    for (auto& [name, v] : items_) v.zero_grad();
  }

  int64_t total_params() const {
    int64_t n = 0;
    for (const auto& [name, v] : items_) n += v.numel();
    return n;
  }

  double grad_norm() const {
    double s = 0;
    for (const auto& [name, v] : items_) {
      if (!v.has_grad()) continue;
      for (int64_t i = 0; i < v.grad().numel(); ++i) {
        double g = double(v.grad()[i]);
        s += g * g;
      }
    }
    return std::sqrt(s);
  }

 private:
  Variable<T> put(const std::string& name, Tensor<T> t) {
    if (index_.count(name)) throw Error("duplicate parameter name " + name);
    Variable<T> v = Variable<T>::leaf(std::move(t), true);
    index_[name] = items_.size();
    items_.emplace_back(name, v);
    return v;
  }

  uint64_t init_seed_;
  std::vector<std::pair<std::string, Variable<T>>> items_;
  std::unordered_map<std::string, size_t> index_;
};

// Per-forward context: training flag plus the counter-based dropout stream.
template <typename T>
struct FwdCtx {
  bool train = false;
  T dropout_p = T(0);
  uint64_t dropout_seed = 0;
  mutable uint64_t dropout_ctr = 0;

  Variable<T> drop(const Variable<T>& x) const {
    if (!train || dropout_p <= T(0)) return x;
    return dropout(x, dropout_p, sub_seed(dropout_seed, "mask", dropout_ctr++));
  }
};

template <typename T>
struct Linear {
  Variable<T> w;  // [in, out]
  Variable<T> b;  // [out], undefined when bias-free

  Linear() = default;
  Linear(ParamStore<T>& ps, const std::string& name, int64_t in, int64_t out, bool bias = true)
      : w(ps.xavier(name + ".w", in, out)) {
    if (bias) b = ps.zeros(name + ".b", {out});
  }

  Variable<T> operator()(const Variable<T>& x) const {
    Variable<T> y = matmul(x, w);
    return b.defined() ? add(y, b) : y;
  }
};

template <typename T>
struct LayerNorm {
  Variable<T> gamma, beta;
  T eps;

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& ps, const std::string& name, int64_t d, T eps = T(1e-5))
      : gamma(ps.ones(name + ".gamma", {d})), beta(ps.zeros(name + ".beta", {d})), eps(eps) {}

  Variable<T> operator()(const Variable<T>& x) const {
    return add(mul(layer_norm(x, eps), gamma), beta);
  }
};

// Gated recurrent cell: z and r gates, candidate state h~, and the blend
// h' = (1 - z) * h + z * h~.
template <typename T>
struct GruCell {
  Variable<T> wz, uz, bz;
  Variable<T> wr, ur, br;
  Variable<T> wh, uh, bh;

  GruCell() = default;
  GruCell(ParamStore<T>& ps, const std::string& name, int64_t in, int64_t hidden)
      : wz(ps.xavier(name + ".wz", in, hidden)),
        uz(ps.xavier(name + ".uz", hidden, hidden)),
        bz(ps.zeros(name + ".bz", {hidden})),
        wr(ps.xavier(name + ".wr", in, hidden)),
        ur(ps.xavier(name + ".ur", hidden, hidden)),
        br(ps.zeros(name + ".br", {hidden})),
        wh(ps.xavier(name + ".wh", in, hidden)),
        uh(ps.xavier(name + ".uh", hidden, hidden)),
        bh(ps.zeros(name + ".bh", {hidden})) {}

  // state: [B, hidden], input: [B, in] -> [B, hidden]
  Variable<T> operator()(const Variable<T>& state, const Variable<T>& input) const {
    Variable<T> z = sigmoid(add(add(matmul(input, wz), matmul(state, uz)), bz));
    Variable<T> r = sigmoid(add(add(matmul(input, wr), matmul(state, ur)), br));
    Variable<T> cand = tanh_op(add(add(matmul(input, wh), matmul(mul(r, state), uh)), bh));
    return add(mul(affine(z, T(-1), T(1)), state), mul(z, cand));
  }
};

// char embeddings -> width-k convolution -> max over time -> linear
template <typename T>
struct CharCnn {
  Variable<T> char_emb;  // [Vc, ce]
  Variable<T> conv_w;    // [k*ce, filters]
  Variable<T> conv_b;    // [filters]
  Linear<T> out;
  int64_t width = 3;

  CharCnn() = default;
  CharCnn(ParamStore<T>& ps, const std::string& name, int64_t char_vocab, int64_t char_dim,
          int64_t filters, int64_t width, int64_t out_dim)
      : char_emb(ps.embedding(name + ".char_emb", char_vocab, char_dim)),
        conv_w(ps.xavier(name + ".conv_w", width * char_dim, filters)),
        conv_b(ps.zeros(name + ".conv_b", {filters})),
        out(ps, name + ".out", filters, out_dim),
        width(width) {}

  // batch of char id sequences -> [B, out_dim]; short words are padded with
  // the dedicated pad char up to the filter width
  Variable<T> operator()(const std::vector<std::vector<int32_t>>& seqs) const {
    int64_t b = int64_t(seqs.size());
    int64_t maxlen = width;
    for (const auto& s : seqs) maxlen = std::max(maxlen, int64_t(s.size()));
    std::vector<int32_t> ids(size_t(b * maxlen), special::kPadId);
    for (int64_t i = 0; i < b; ++i)
      for (size_t t = 0; t < seqs[size_t(i)].size(); ++t)
        ids[size_t(i * maxlen) + t] = seqs[size_t(i)][t];
    int64_t ce = char_emb.shape()[1];
    Variable<T> emb = reshape(embedding_lookup(char_emb, ids), {b, maxlen, ce});
    Variable<T> conv = add(conv1d(emb, conv_w, width), conv_b);  // [b, maxlen-w+1, f]
    int64_t windows = maxlen - width + 1;
    // batch padding opens windows past each word's end; push them under any
    // real activation before pooling
    Tensor<T> mask({b, windows, 1});
    for (int64_t i = 0; i < b; ++i) {
      int64_t len = std::max<int64_t>(int64_t(seqs[size_t(i)].size()), width);
      for (int64_t t = 0; t < windows; ++t)
        mask[i * windows + t] = t <= len - width ? T(0) : T(-1e30);
    }
    conv = add(conv, Variable<T>::constant(mask));
    Variable<T> pooled = reshape(max_pool1d(conv), {b, conv_b.shape()[0]});
    return out(pooled);
  }
};

// free-function form used by tests
template <typename T>
Variable<T> gru_cell(const GruCell<T>& cell, const Variable<T>& state, const Variable<T>& input) {
  return cell(state, input);
}

}  // namespace g2s

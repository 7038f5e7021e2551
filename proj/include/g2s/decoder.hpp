#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "g2s/graph.hpp"
#include "g2s/nn.hpp"
#include "g2s/vocab.hpp"

namespace g2s {

template <typename T>
struct DecoderBlock {
  Variable<T> self_wq, self_wk, self_wv, self_wo;
  Variable<T> cross_wq, cross_wk, cross_wv, cross_wo;
  Linear<T> ff1, ff2;
  LayerNorm<T> ln1, ln2, ln3;

  DecoderBlock() = default;
  DecoderBlock(ParamStore<T>& ps, const std::string& name, int64_t d, int64_t d_ff)
      : self_wq(ps.xavier(name + ".self_wq", d, d)),
        self_wk(ps.xavier(name + ".self_wk", d, d)),
        self_wv(ps.xavier(name + ".self_wv", d, d)),
        self_wo(ps.xavier(name + ".self_wo", d, d)),
        cross_wq(ps.xavier(name + ".cross_wq", d, d)),
        cross_wk(ps.xavier(name + ".cross_wk", d, d)),
        cross_wv(ps.xavier(name + ".cross_wv", d, d)),
        cross_wo(ps.xavier(name + ".cross_wo", d, d)),
        ff1(ps, name + ".ff1", d, d_ff),
        ff2(ps, name + ".ff2", d_ff, d),
        ln1(ps, name + ".ln1", d),
        ln2(ps, name + ".ln2", d),
        ln3(ps, name + ".ln3", d) {}
};

// single-head copy attention, the gen/copy gate, and the closed-vocab softmax
template <typename T>
struct CopyOut {
  Variable<T> gen;   // [S, Vt]  softmax over the closed vocabulary
  Variable<T> gate;  // [S, 2]   (P(gen), P(copy))
  Variable<T> attn;  // [S, n]   copy attention over ordinary nodes
};

// Transformer decoder over graph encodings: masked self-attention, then
// cross-attention over the node representations (global row excluded by the
// caller), then feed-forward, each with residual + layer norm. The graph
// vector x_global is added to every input embedding.
template <typename T>
class SeqDecoder {
 public:
  SeqDecoder() = default;
  SeqDecoder(ParamStore<T>& ps, int64_t token_vocab, int64_t char_vocab, int64_t token_dim,
             int64_t char_dim, int64_t char_filters, int64_t char_width, int64_t char_out,
             int64_t d_model, int64_t d_ff, int64_t heads, int64_t layers, int64_t max_pos)
      : token_emb_(ps.embedding("dec.token_emb", token_vocab, token_dim)),
        char_cnn_(ps, "dec.char_cnn", char_vocab, char_dim, char_filters, char_width, char_out),
        input_proj_(ps, "dec.input_proj", token_dim + char_out, d_model),
        pos_emb_(ps.embedding("dec.pos_emb", max_pos, d_model)),
        copy_q_(ps.xavier("dec.copy_q", d_model, d_model)),
        copy_k_(ps.xavier("dec.copy_k", d_model, d_model)),
        gate_(ps, "dec.gate", d_model, 2),
        out_w_(ps.xavier("dec.out_w", d_model, token_vocab)),
        d_model_(d_model),
        heads_(heads),
        max_pos_(max_pos) {
    for (int64_t l = 0; l < layers; ++l)
      blocks_.emplace_back(ps, "dec.block" + std::to_string(l), d_model, d_ff);
  }

  int64_t layers() const { return int64_t(blocks_.size()); }

  // input embedding for steps [first, first + count):
  // Proj([token_emb(y_{t-1}); charCNN(y_{t-1})]) + pos_emb(t) + x_global
  Variable<T> embed_tokens(const std::vector<int32_t>& prev_ids,
                           const std::vector<std::vector<int32_t>>& prev_chars,
                           const Variable<T>& x_global, int64_t first_step,
                           const FwdCtx<T>& ctx) const {
    Variable<T> tok = embedding_lookup(token_emb_, prev_ids);
    Variable<T> chars = char_cnn_(prev_chars);
    Variable<T> x = input_proj_(concat<T>({tok, chars}, 1));
    std::vector<int32_t> pos(prev_ids.size());
    for (size_t t = 0; t < pos.size(); ++t)
      pos[t] = int32_t(std::min<int64_t>(first_step + int64_t(t), max_pos_ - 1));
    x = add(x, embedding_lookup(pos_emb_, pos));
    return ctx.drop(add(x, x_global));  // x_global broadcasts over steps
  }

  // teacher-forced pass over all steps with a causal mask
  Variable<T> forward_states(const Variable<T>& input_embs, const Variable<T>& node_reps,
                             const FwdCtx<T>& ctx) const {
    int64_t s = input_embs.shape()[0];
    if (s == 0) throw DataError("decoder: empty target");
    Tensor<T> causal({s, s});
    for (int64_t i = 0; i < s; ++i)
      for (int64_t j = 0; j < s; ++j)
        causal[i * s + j] = j > i ? -std::numeric_limits<T>::infinity() : T(0);
    Variable<T> mask = Variable<T>::constant(causal);
    Variable<T> x = input_embs;
    for (const auto& blk : blocks_) {
      Variable<T> self_out = mha(x, x, x, blk.self_wq, blk.self_wk, blk.self_wv, blk.self_wo,
                                 &mask);
      Variable<T> x1 = blk.ln1(add(x, ctx.drop(self_out)));
      Variable<T> cross = mha(x1, node_reps, node_reps, blk.cross_wq, blk.cross_wk, blk.cross_wv,
                              blk.cross_wo, nullptr);
      Variable<T> x2 = blk.ln2(add(x1, ctx.drop(cross)));
      Variable<T> ff = blk.ff2(relu(blk.ff1(x2)));
      x = blk.ln3(add(x2, ctx.drop(ff)));
    }
    return x;
  }

  CopyOut<T> copy_forward(const Variable<T>& h, const Variable<T>& node_reps) const {
    CopyOut<T> out;
    out.gen = softmax(matmul(h, out_w_));
    out.gate = softmax(gate_(h));
    Variable<T> q = matmul(h, copy_q_);
    Variable<T> k = matmul(node_reps, copy_k_);
    out.attn = softmax(scale(matmul(q, transpose2d(k)), T(1) / T(std::sqrt(double(d_model_)))));
    return out;
  }

  // -- incremental decoding ------------------------------------------------

  // per-graph constants shared by all hypotheses
  struct CrossCache {
    std::vector<Variable<T>> k, v;  // per layer, [n, d]
  };

  CrossCache make_cross_cache(const Variable<T>& node_reps) const {
    CrossCache c;
    for (const auto& blk : blocks_) {
      c.k.push_back(matmul(node_reps, blk.cross_wk));
      c.v.push_back(matmul(node_reps, blk.cross_wv));
    }
    return c;
  }

  // per-hypothesis growing self-attention keys/values
  struct StepCache {
    std::vector<Variable<T>> k, v;  // per layer, [t, d]
    int64_t step = 0;
  };

  // one decoding step; x is the single-row input embedding for this step
  Variable<T> step(StepCache& cache, const CrossCache& cross, const Variable<T>& x_in,
                   const FwdCtx<T>& ctx) const {
    if (cache.k.empty()) {
      cache.k.resize(blocks_.size());
      cache.v.resize(blocks_.size());
    }
    Variable<T> x = x_in;
    for (size_t l = 0; l < blocks_.size(); ++l) {
      const auto& blk = blocks_[l];
      Variable<T> k_new = matmul(x, blk.self_wk);
      Variable<T> v_new = matmul(x, blk.self_wv);
      cache.k[l] = cache.k[l].defined() ? concat<T>({cache.k[l], k_new}, 0) : k_new;
      cache.v[l] = cache.v[l].defined() ? concat<T>({cache.v[l], v_new}, 0) : v_new;
      Variable<T> self_out = mha_precomputed(matmul(x, blk.self_wq), cache.k[l], cache.v[l],
                                             blk.self_wo);
      Variable<T> x1 = blk.ln1(add(x, ctx.drop(self_out)));
      Variable<T> cross_out = mha_precomputed(matmul(x1, blk.cross_wq), cross.k[l], cross.v[l],
                                              blk.cross_wo);
      Variable<T> x2 = blk.ln2(add(x1, ctx.drop(cross_out)));
      Variable<T> ff = blk.ff2(relu(blk.ff1(x2)));
      x = blk.ln3(add(x2, ctx.drop(ff)));
    }
    cache.step++;
    return x;  // [1, d]
  }

  const Variable<T>& token_embedding_table() const { return token_emb_; }
  const CharCnn<T>& token_char_cnn() const { return char_cnn_; }

 private:
  // full multi-head attention; mask (optional) is added to every head's scores
  Variable<T> mha(const Variable<T>& queries, const Variable<T>& keys, const Variable<T>& values,
                  const Variable<T>& wq, const Variable<T>& wk, const Variable<T>& wv,
                  const Variable<T>& wo, const Variable<T>* mask) const {
    int64_t dh = d_model_ / heads_;
    std::vector<int64_t> sizes(size_t(heads_), dh);
    auto qh = split(matmul(queries, wq), 1, sizes);
    auto kh = split(matmul(keys, wk), 1, sizes);
    auto vh = split(matmul(values, wv), 1, sizes);
    T inv_sqrt = T(1) / T(std::sqrt(double(dh)));
    std::vector<Variable<T>> outs;
    for (int64_t h = 0; h < heads_; ++h) {
      Variable<T> scores = scale(matmul(qh[size_t(h)], transpose2d(kh[size_t(h)])), inv_sqrt);
      if (mask) scores = add(scores, *mask);
      outs.push_back(matmul(softmax(scores), vh[size_t(h)]));
    }
    return matmul(concat(outs, 1), wo);
  }

  // same, with keys/values already projected (incremental path)
  Variable<T> mha_precomputed(const Variable<T>& q, const Variable<T>& k, const Variable<T>& v,
                              const Variable<T>& wo) const {
    int64_t dh = d_model_ / heads_;
    std::vector<int64_t> sizes(size_t(heads_), dh);
    auto qh = split(q, 1, sizes);
    auto kh = split(k, 1, sizes);
    auto vh = split(v, 1, sizes);
    T inv_sqrt = T(1) / T(std::sqrt(double(dh)));
    std::vector<Variable<T>> outs;
    for (int64_t h = 0; h < heads_; ++h) {
      Variable<T> scores = scale(matmul(qh[size_t(h)], transpose2d(kh[size_t(h)])), inv_sqrt);
      outs.push_back(matmul(softmax(scores), vh[size_t(h)]));
    }
    return matmul(concat(outs, 1), wo);
  }

  Variable<T> token_emb_;
  CharCnn<T> char_cnn_;
  Linear<T> input_proj_;
  Variable<T> pos_emb_;
  std::vector<DecoderBlock<T>> blocks_;
  Variable<T> copy_q_, copy_k_;
  Linear<T> gate_;
  Variable<T> out_w_;
  int64_t d_model_ = 0;
  int64_t heads_ = 0;
  int64_t max_pos_ = 0;
};

// partial decoder output during search
struct Hypothesis {
  std::vector<int32_t> ext_tokens;  // extended ids, starts with BOS
  std::vector<bool> copied;         // provenance per emitted token
  double score = 0.0;               // sum of per-step log probabilities
  bool completed = false;           // last token is EOS
  bool hit_max_len = false;
};

// post-processing hook for copied surface forms; identity by default
using AnonymizationHook = std::function<std::string(const std::string&)>;

inline std::string identity_hook(const std::string& s) { return s; }

}  // namespace g2s

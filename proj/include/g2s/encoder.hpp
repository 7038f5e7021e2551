#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "g2s/nn.hpp"
#include "g2s/relation.hpp"

namespace g2s {

// vocab-mapped view of one augmented graph, ready for the encoder
struct GraphInput {
  int n = 0;                                   // ordinary node count
  std::vector<int32_t> label_ids;              // n entries (UNK replacement applies here)
  std::vector<std::vector<int32_t>> char_ids;  // n entries, raw surface chars
  std::vector<int32_t> positions;              // n+1 entries, global last (= 0)
};

template <typename T>
struct EncoderBlock {
  Variable<T> wq, wk, wv, wo;  // [d, d], bias-free
  Linear<T> ff1, ff2;
  LayerNorm<T> ln1, ln2;

  EncoderBlock() = default;
  EncoderBlock(ParamStore<T>& ps, const std::string& name, int64_t d, int64_t d_ff)
      : wq(ps.xavier(name + ".wq", d, d)),
        wk(ps.xavier(name + ".wk", d, d)),
        wv(ps.xavier(name + ".wv", d, d)),
        wo(ps.xavier(name + ".wo", d, d)),
        ff1(ps, name + ".ff1", d, d_ff),
        ff2(ps, name + ".ff2", d_ff, d),
        ln1(ps, name + ".ln1", d),
        ln2(ps, name + ".ln2", d) {}
};

template <typename T>
struct EncoderOutput {
  Variable<T> node_reps;  // [n, d_model], global row excluded
  Variable<T> x_global;   // [1, d_model]
  // attention weights per layer / head, [n+1, n+1] each, retained as values
  std::vector<std::vector<Tensor<T>>> attention;
};

// Stacked relation-enhanced global attention. Every node attends to every
// node (the global node included); the graph structure enters through the
// relation tables only.
template <typename T>
class GraphEncoder {
 public:
  GraphEncoder() = default;
  GraphEncoder(ParamStore<T>& ps, int64_t node_vocab, int64_t char_vocab, int64_t node_dim,
               int64_t char_dim, int64_t char_filters, int64_t char_width, int64_t char_out,
               int64_t d_model, int64_t d_ff, int64_t heads, int64_t layers, int64_t max_pos)
      : node_emb_(ps.embedding("enc.node_emb", node_vocab, node_dim)),
        char_cnn_(ps, "enc.char_cnn", char_vocab, char_dim, char_filters, char_width, char_out),
        input_proj_(ps, "enc.input_proj", node_dim + char_out, d_model),
        pos_emb_(ps.embedding("enc.pos_emb", max_pos, d_model)),
        global_emb_(ps.embedding("enc.global_emb", 1, d_model)),
        d_model_(d_model),
        heads_(heads),
        max_pos_(max_pos) {
    for (int64_t l = 0; l < layers; ++l)
      blocks_.emplace_back(ps, "enc.block" + std::to_string(l), d_model, d_ff);
  }

  int64_t layers() const { return int64_t(blocks_.size()); }
  int64_t heads() const { return heads_; }
  const std::vector<EncoderBlock<T>>& blocks() const { return blocks_; }

  // x0 = Proj([node_emb; charCNN(chars)]) + pos_emb; the global node has its
  // own learned embedding and position 0
  Variable<T> node_init(const GraphInput& in, const FwdCtx<T>& ctx) const {
    if (int(in.label_ids.size()) != in.n || int(in.char_ids.size()) != in.n ||
        int(in.positions.size()) != in.n + 1)
      throw ShapeError("node_init: inconsistent graph input sizes");
    Variable<T> lab = embedding_lookup(node_emb_, in.label_ids);  // [n, node_dim]
    Variable<T> chars = char_cnn_(in.char_ids);                   // [n, char_out]
    Variable<T> x = input_proj_(concat<T>({lab, chars}, 1));      // [n, d]
    Variable<T> all = concat<T>({x, global_emb_}, 0);             // [n+1, d]
    std::vector<int32_t> pos = in.positions;
    for (auto& p : pos) p = std::min<int32_t>(p, int32_t(max_pos_ - 1));
    Variable<T> pe = embedding_lookup(pos_emb_, pos);
    return ctx.drop(add(all, pe));
  }

  EncoderOutput<T> encode(const GraphInput& in, const RelationTables<T>& rel,
                          const FwdCtx<T>& ctx) const {
    Variable<T> x = node_init(in, ctx);
    EncoderOutput<T> out;
    for (size_t l = 0; l < blocks_.size(); ++l) {
      auto [next, attn] = block_forward(blocks_[l], x, rel, ctx, int(l));
      x = next;
      out.attention.push_back(std::move(attn));
    }
    out.node_reps = slice(x, 0, 0, in.n);
    out.x_global = slice(x, 0, in.n, 1);
    return out;
  }

  // The attention score splits into four terms:
  //   (x_i + r_fwd) Wq . Wk (x_j + r_bwd)
  //   = x_i Q.K x_j  +  x_i Q.K r_bwd  +  r_fwd Q.K x_j  +  r_fwd Q.K r_bwd
  // content, source relation bias, target relation bias, universal bias.
  std::pair<Variable<T>, std::vector<Tensor<T>>> block_forward(const EncoderBlock<T>& blk,
                                                               const Variable<T>& x,
                                                               const RelationTables<T>& rel,
                                                               const FwdCtx<T>& ctx,
                                                               int layer) const {
    int64_t n1 = x.shape()[0];
    int64_t dh = d_model_ / heads_;
    Variable<T> q = matmul(x, blk.wq);
    Variable<T> k = matmul(x, blk.wk);
    Variable<T> v = matmul(x, blk.wv);
    Variable<T> qr = matmul(rel.fwd, blk.wq);  // [n1*n1, d]
    Variable<T> kr = matmul(rel.bwd, blk.wk);
    std::vector<int64_t> head_sizes(size_t(heads_), dh);
    auto qh = split(q, 1, head_sizes);
    auto kh = split(k, 1, head_sizes);
    auto vh = split(v, 1, head_sizes);
    auto qrh = split(qr, 1, head_sizes);
    auto krh = split(kr, 1, head_sizes);
    std::vector<Variable<T>> outs;
    std::vector<Tensor<T>> attn_weights;
    T inv_sqrt = T(1) / T(std::sqrt(double(dh)));
    for (int64_t h = 0; h < heads_; ++h) {
      Variable<T> content = matmul(qh[size_t(h)], transpose2d(kh[size_t(h)]));
      Variable<T> qr3 = reshape(qrh[size_t(h)], {n1, n1, dh});
      Variable<T> kr3 = reshape(krh[size_t(h)], {n1, n1, dh});
      Variable<T> src_bias =
          reduce_sum(mul(kr3, reshape(qh[size_t(h)], {n1, 1, dh})), 2);  // q_i . kr_ij
      Variable<T> tgt_bias =
          reduce_sum(mul(qr3, reshape(kh[size_t(h)], {1, n1, dh})), 2);  // qr_ij . k_j
      Variable<T> rel_bias = reduce_sum(mul(qr3, kr3), 2);
      Variable<T> scores =
          scale(add(add(content, src_bias), add(tgt_bias, rel_bias)), inv_sqrt);
      check_scores(scores.value(), layer, int(h));
      Variable<T> attn = softmax(scores);
      attn_weights.push_back(attn.value());
      outs.push_back(matmul(attn, vh[size_t(h)]));
    }
    Variable<T> mha = matmul(concat(outs, 1), blk.wo);
    Variable<T> x1 = blk.ln1(add(x, ctx.drop(mha)));
    Variable<T> ff = blk.ff2(relu(blk.ff1(x1)));
    Variable<T> x2 = blk.ln2(add(x1, ctx.drop(ff)));
    return {x2, std::move(attn_weights)};
  }

 private:
  static void check_scores(const Tensor<T>& s, int layer, int head) {
    if (s.all_finite()) return;
    int64_t n = s.shape()[0];
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < n; ++j)
        if (!std::isfinite(double(s[i * n + j])))
          throw NumericError("non-finite attention score at pair (" + std::to_string(i) + "," +
                             std::to_string(j) + ") head " + std::to_string(head) + " layer " +
                             std::to_string(layer));
  }

  Variable<T> node_emb_;
  CharCnn<T> char_cnn_;
  Linear<T> input_proj_;
  Variable<T> pos_emb_;
  Variable<T> global_emb_;
  std::vector<EncoderBlock<T>> blocks_;
  int64_t d_model_ = 0;
  int64_t heads_ = 0;
  int64_t max_pos_ = 0;
};

}  // namespace g2s

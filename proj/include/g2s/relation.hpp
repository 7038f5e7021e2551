#pragma once

#include <string>
#include <vector>

#include "g2s/nn.hpp"
#include "g2s/paths.hpp"
#include "g2s/vocab.hpp"

namespace g2s {

// Relation encodings for every ordered node pair of one graph, already split
// into the forward (query-side) and backward (key-side) halves. Rows are
// pair-major: row i*n + j is the pair (i, j).
template <typename T>
struct RelationTables {
  Variable<T> fwd;  // [n*n, d_model]
  Variable<T> bwd;  // [n*n, d_model]
  int n = 0;        // node count including the global node
};

// Bi-directional GRU over shortest relation paths plus the split projection.
// Path encodings depend only on the label sequence, so a batch encodes each
// distinct sequence once and graphs gather their pairs out of that matrix.
template <typename T>
class RelationEncoder {
 public:
  RelationEncoder() = default;
  RelationEncoder(ParamStore<T>& ps, int64_t edge_vocab, int64_t edge_dim, int64_t hidden,
                  int64_t d_model)
      : edge_emb_(ps.embedding("rel.edge_emb", edge_vocab, edge_dim)),
        fwd_(ps, "rel.gru_fwd", edge_dim, hidden),
        bwd_(ps, "rel.gru_bwd", edge_dim, hidden),
        w_r_(ps.xavier("rel.w_r", 2 * hidden, 2 * d_model)),
        hidden_(hidden),
        d_model_(d_model) {}

  int64_t encoding_dim() const { return 2 * hidden_; }

  // [P, 2*hidden]: concatenation of the final forward state and the
  // backward state at position 0, per sequence.
  Variable<T> encode_paths(const std::vector<std::vector<std::string>>& seqs,
                           const Vocab& edge_labels) const {
    if (seqs.empty()) throw DataError("encode_paths: no sequences");
    int64_t p = int64_t(seqs.size());
    int64_t maxlen = 0;
    for (const auto& s : seqs) {
      if (s.empty()) throw DataError("encode_paths: empty label sequence");
      maxlen = std::max(maxlen, int64_t(s.size()));
    }
    // pad with id 0; masking freezes the state beyond each length
    std::vector<int32_t> fwd_ids(size_t(p * maxlen), 0), bwd_ids(size_t(p * maxlen), 0);
    for (int64_t i = 0; i < p; ++i) {
      const auto& s = seqs[size_t(i)];
      int64_t len = int64_t(s.size());
      for (int64_t t = 0; t < len; ++t) {
        int32_t id = edge_labels.require(s[size_t(t)]);
        fwd_ids[size_t(i * maxlen + t)] = id;
        bwd_ids[size_t(i * maxlen + (len - 1 - t))] = id;  // reversed within length
      }
    }
    Variable<T> fe = run_direction(fwd_, fwd_ids, seqs, p, maxlen);
    Variable<T> be = run_direction(bwd_, bwd_ids, seqs, p, maxlen);
    return concat<T>({fe, be}, 1);
  }

  // Gather one graph's pairs out of the unique-path encodings and split.
  // Test-time averaging over tied paths happens inside the gather, before
  // the split projection.
  RelationTables<T> tables_for_graph(const Variable<T>& unique_encodings,
                                     const DedupResult::PerGraph& pg, int n) const {
    std::vector<T> w(pg.weights.size());
    for (size_t i = 0; i < w.size(); ++i) w[i] = T(pg.weights[i]);
    Variable<T> pairs = weighted_gather(unique_encodings, pg.offsets, pg.indices, w);
    Variable<T> both = matmul(pairs, w_r_);  // [n*n, 2*d_model]
    auto halves = split(both, 1, {d_model_, d_model_});
    return {halves[0], halves[1], n};
  }

  const Variable<T>& split_projection() const { return w_r_; }

 private:
  Variable<T> run_direction(const GruCell<T>& cell, const std::vector<int32_t>& ids,
                            const std::vector<std::vector<std::string>>& seqs, int64_t p,
                            int64_t maxlen) const {
    Variable<T> emb = embedding_lookup(edge_emb_, ids);               // [p*maxlen, e]
    Variable<T> state = Variable<T>::constant(Tensor<T>({p, hidden_}));
    int64_t edge_dim = edge_emb_.shape()[1];
    for (int64_t t = 0; t < maxlen; ++t) {
      // rows t, t+maxlen, ... are the step-t inputs
      Variable<T> xt = slice(reshape(emb, {p, maxlen, edge_dim}), 1, t, 1);
      xt = reshape(xt, {p, edge_dim});
      Variable<T> next = cell(state, xt);
      Tensor<T> mask({p, 1});
      for (int64_t i = 0; i < p; ++i)
        mask[i] = t < int64_t(seqs[size_t(i)].size()) ? T(1) : T(0);
      Variable<T> m = Variable<T>::constant(mask);
      state = add(mul(m, next), mul(affine(m, T(-1), T(1)), state));
    }
    return state;
  }

  Variable<T> edge_emb_;  // [E, edge_dim]
  GruCell<T> fwd_, bwd_;
  Variable<T> w_r_;  // [2*hidden, 2*d_model]
  int64_t hidden_ = 0;
  int64_t d_model_ = 0;
};

}  // namespace g2s

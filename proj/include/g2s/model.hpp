#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "g2s/checkpoint.hpp"
#include "g2s/data.hpp"
#include "g2s/decoder.hpp"
#include "g2s/encoder.hpp"
#include "g2s/relation.hpp"

namespace g2s {

struct ModelConfig {
  int64_t d_model = 512;
  int64_t heads = 8;
  int64_t d_ff = 1024;
  int64_t layers = 6;
  int64_t node_emb_dim = 300;
  int64_t token_emb_dim = 300;
  int64_t edge_emb_dim = 200;
  int64_t char_emb_dim = 32;
  int64_t char_filters = 256;
  int64_t char_width = 3;
  int64_t char_out_dim = 128;
  int64_t rel_hidden = 128;
  int64_t max_positions = 256;
  double dropout = 0.2;

  void check() const {
    if (d_model % heads != 0) throw ConfigError("d_model must be divisible by heads");
    if (layers < 0) throw ConfigError("layers must be >= 0");
  }

  std::map<std::string, std::string> to_map() const {
    return {{"d_model", std::to_string(d_model)},
            {"heads", std::to_string(heads)},
            {"d_ff", std::to_string(d_ff)},
            {"layers", std::to_string(layers)},
            {"node_emb_dim", std::to_string(node_emb_dim)},
            {"token_emb_dim", std::to_string(token_emb_dim)},
            {"edge_emb_dim", std::to_string(edge_emb_dim)},
            {"char_emb_dim", std::to_string(char_emb_dim)},
            {"char_filters", std::to_string(char_filters)},
            {"char_width", std::to_string(char_width)},
            {"char_out_dim", std::to_string(char_out_dim)},
            {"rel_hidden", std::to_string(rel_hidden)},
            {"max_positions", std::to_string(max_positions)},
            {"dropout", std::to_string(dropout)}};
  }
};

// per-graph copy candidates: node surfaces resolved to token ids where
// possible, otherwise to fresh extended ids past the closed vocabulary
struct CopyCandidates {
  std::vector<int32_t> node_ext;     // per ordinary node
  std::vector<std::string> extras;   // surfaces for ids >= vocab size
  int32_t vocab_size = 0;

  int32_t ext_size() const { return vocab_size + int32_t(extras.size()); }

  int32_t ext_id(const std::string& surface, const Vocab& tokens) const {
    int32_t t = tokens.id(surface);
    if (t >= 0) return t;
    for (size_t k = 0; k < extras.size(); ++k)
      if (extras[k] == surface) return vocab_size + int32_t(k);
    return -1;
  }
};

template <typename T>
class GraphTransformer {
 public:
  GraphTransformer(const ModelConfig& cfg, const Vocabs& vocabs, uint64_t init_seed)
      : cfg_(cfg),
        vocabs_(vocabs),
        params_(init_seed),
        relation_(params_, vocabs.edge_labels.size(), cfg.edge_emb_dim, cfg.rel_hidden,
                  cfg.d_model),
        encoder_(params_, vocabs.node_labels.size(), vocabs.chars.size(), cfg.node_emb_dim,
                 cfg.char_emb_dim, cfg.char_filters, cfg.char_width, cfg.char_out_dim, cfg.d_model,
                 cfg.d_ff, cfg.heads, cfg.layers, cfg.max_positions),
        decoder_(params_, vocabs.tokens.size(), vocabs.chars.size(), cfg.token_emb_dim,
                 cfg.char_emb_dim, cfg.char_filters, cfg.char_width, cfg.char_out_dim, cfg.d_model,
                 cfg.d_ff, cfg.heads, cfg.layers, cfg.max_positions) {
    cfg.check();
  }

  const ModelConfig& config() const { return cfg_; }
  const Vocabs& vocabs() const { return vocabs_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  const RelationEncoder<T>& relation_encoder() const { return relation_; }
  const GraphEncoder<T>& graph_encoder() const { return encoder_; }
  const SeqDecoder<T>& seq_decoder() const { return decoder_; }

  FwdCtx<T> make_ctx(bool train, uint64_t dropout_seed) const {
    FwdCtx<T> ctx;
    ctx.train = train;
    ctx.dropout_p = T(cfg_.dropout);
    ctx.dropout_seed = dropout_seed;
    return ctx;
  }

  // vocab-mapped encoder input; label ids may be UNK-replaced afterwards
  GraphInput make_input(const Example& ex) const {
    GraphInput in;
    in.n = ex.graph.n() - 1;
    for (int i = 0; i < in.n; ++i) {
      const auto& node = ex.graph.nodes[size_t(i)];
      in.label_ids.push_back(vocabs_.node_id(node.label));
      std::vector<int32_t> cs;
      for (const auto& c : node.char_seq) cs.push_back(vocabs_.char_id(c));
      in.char_ids.push_back(std::move(cs));
    }
    for (int p : ex.positions) in.positions.push_back(int32_t(p));
    return in;
  }

  CopyCandidates make_candidates(const Example& ex) const {
    CopyCandidates c;
    c.vocab_size = vocabs_.tokens.size();
    int n = ex.graph.n() - 1;
    for (int i = 0; i < n; ++i) {
      const std::string& label = ex.graph.nodes[size_t(i)].label;
      int32_t t = vocabs_.tokens.id(label);
      if (t >= 0) {
        c.node_ext.push_back(t);
      } else {
        int32_t found = -1;
        for (size_t k = 0; k < c.extras.size(); ++k)
          if (c.extras[k] == label) found = c.vocab_size + int32_t(k);
        if (found < 0) {
          found = c.vocab_size + int32_t(c.extras.size());
          c.extras.push_back(label);
        }
        c.node_ext.push_back(found);
      }
    }
    return c;
  }

  // relation tables for one graph given batch-deduplicated path encodings
  RelationTables<T> relation_tables(const Variable<T>& unique_encodings,
                                    const DedupResult::PerGraph& pg, int n_with_global) const {
    return relation_.tables_for_graph(unique_encodings, pg, n_with_global);
  }

  Variable<T> encode_unique_paths(const DedupResult& dedup) const {
    return relation_.encode_paths(dedup.unique, vocabs_.edge_labels);
  }

  EncoderOutput<T> encode(const GraphInput& in, const RelationTables<T>& rel,
                          const FwdCtx<T>& ctx) const {
    return encoder_.encode(in, rel, ctx);
  }

  // convenience: full single-graph encode (test-mode path averaging)
  EncoderOutput<T> encode_example(const Example& ex, const FwdCtx<T>& ctx,
                                  PathMode mode = PathMode::Test, uint64_t path_seed = 0) const {
    auto sel = select_paths(ex.paths, mode, path_seed);
    auto dedup = dedup_paths({{&ex.paths, &sel}});
    Variable<T> unique = encode_unique_paths(dedup);
    auto rel = relation_tables(unique, dedup.graphs[0], ex.graph.n());
    return encode(make_input(ex), rel, ctx);
  }

  // -- teacher forcing ------------------------------------------------------

  struct TargetBatch {
    std::vector<int32_t> prev_ids;                  // BOS, y_1 .. y_m
    std::vector<std::vector<int32_t>> prev_chars;
    std::vector<int32_t> gold_vocab_ids;            // y_1 .. y_m, EOS (0 when OOV)
    std::vector<T> gold_in_vocab;                   // 1/0 mask
    Tensor<T> copy_indicator;                       // [S, n]
    std::vector<int32_t> gold_ext;                  // extended ids, -1 when impossible
    std::vector<std::string> gold_surface;
  };

  TargetBatch prepare_target(const Example& ex, const CopyCandidates& cands) const {
    if (ex.tokens.empty()) throw DataError("prepare_target: example has no reference tokens");
    int n = ex.graph.n() - 1;
    TargetBatch tb;
    std::vector<std::string> gold = ex.tokens;
    gold.push_back(special::kEos);
    int64_t steps = int64_t(gold.size());
    tb.prev_ids.push_back(special::kBosId);
    tb.prev_chars.push_back(token_chars(special::kBos));
    for (size_t t = 0; t + 1 < gold.size(); ++t) {
      int32_t id = vocabs_.tokens.id(gold[t]);
      tb.prev_ids.push_back(id >= 0 ? id : special::kUnkId);
      tb.prev_chars.push_back(token_chars(gold[t]));
    }
    tb.copy_indicator = Tensor<T>({steps, int64_t(n)});
    for (int64_t t = 0; t < steps; ++t) {
      const std::string& y = gold[size_t(t)];
      int32_t vid = vocabs_.tokens.id(y);
      tb.gold_vocab_ids.push_back(vid >= 0 ? vid : 0);
      tb.gold_in_vocab.push_back(vid >= 0 ? T(1) : T(0));
      for (int i = 0; i < n; ++i)
        tb.copy_indicator[t * n + i] = ex.graph.nodes[size_t(i)].label == y ? T(1) : T(0);
      tb.gold_ext.push_back(cands.ext_id(y, vocabs_.tokens));
      tb.gold_surface.push_back(y);
    }
    return tb;
  }

  // per-step probability of the gold token under the gen/copy mixture
  Variable<T> gold_probabilities(const CopyOut<T>& out, const TargetBatch& tb) const {
    Variable<T> gen_pick = pick(out.gen, tb.gold_vocab_ids);  // [S]
    Variable<T> in_vocab = Variable<T>::constant(
        Tensor<T>({int64_t(tb.gold_in_vocab.size())}, std::vector<T>(tb.gold_in_vocab)));
    gen_pick = mul(gen_pick, in_vocab);
    Variable<T> copy_mass =
        reduce_sum(mul(out.attn, Variable<T>::constant(tb.copy_indicator)), 1);  // [S]
    auto gates = split(out.gate, 1, {1, 1});
    Variable<T> p_gen = reshape(gates[0], {int64_t(tb.gold_vocab_ids.size())});
    Variable<T> p_copy = reshape(gates[1], {int64_t(tb.gold_vocab_ids.size())});
    return add(mul(p_gen, gen_pick), mul(p_copy, copy_mass));
  }

  struct ForwardOut {
    Variable<T> gold_probs;  // [S]
    CopyOut<T> copy;
    Variable<T> states;  // [S, d]
  };

  ForwardOut forward_teacher(const Example& ex, const EncoderOutput<T>& enc,
                             const CopyCandidates& cands, const TargetBatch& tb,
                             const FwdCtx<T>& ctx) const {
    Variable<T> embs = decoder_.embed_tokens(tb.prev_ids, tb.prev_chars, enc.x_global, 0, ctx);
    Variable<T> h = decoder_.forward_states(embs, enc.node_reps, ctx);
    CopyOut<T> out = decoder_.copy_forward(h, enc.node_reps);
    return {gold_probabilities(out, tb), out, h};
  }

  // dense mixture distribution over V + copy-only surfaces (values, no tape)
  Tensor<T> extended_distribution(const Tensor<T>& gen_row, const Tensor<T>& gate_row,
                                  const Tensor<T>& attn_row, const CopyCandidates& cands) const {
    Tensor<T> ext({int64_t(cands.ext_size())});
    T p_gen = gate_row[0], p_copy = gate_row[1];
    for (int64_t v = 0; v < gen_row.numel(); ++v) ext[v] = p_gen * gen_row[v];
    for (size_t i = 0; i < cands.node_ext.size(); ++i)
      ext[cands.node_ext[i]] += p_copy * attn_row[int64_t(i)];
    return ext;
  }

  // -- generation -----------------------------------------------------------

  struct GenerationResult {
    Hypothesis best;
    std::vector<std::string> tokens;  // detokenized, hook applied to copies
  };

  GenerationResult beam_search(const Example& ex, int beam, int max_len,
                               const AnonymizationHook& hook = identity_hook) const {
    if (beam < 1) throw UsageError("beam size must be >= 1");
    FwdCtx<T> ctx = make_ctx(false, 0);
    EncoderOutput<T> enc = encode_example(ex, ctx);
    CopyCandidates cands = make_candidates(ex);
    auto cross = decoder_.make_cross_cache(enc.node_reps);

    struct Live {
      Hypothesis hyp;
      typename SeqDecoder<T>::StepCache cache;
    };
    std::vector<Live> live(1);
    live[0].hyp.ext_tokens = {special::kBosId};
    std::vector<Hypothesis> completed;

    for (int t = 0; t < max_len && !live.empty(); ++t) {
      struct Cand {
        double score;
        size_t from;
        int32_t token;
        double step_lp;
      };
      std::vector<Cand> cands_all;
      for (size_t hi = 0; hi < live.size(); ++hi) {
        auto& lv = live[hi];
        int32_t prev = lv.hyp.ext_tokens.back();
        Variable<T> x = decoder_.embed_tokens({ext_to_vocab(prev, cands)},
                                              {token_chars(ext_surface(prev, cands))},
                                              enc.x_global, int64_t(t), ctx);
        Variable<T> h = decoder_.step(lv.cache, cross, x, ctx);
        CopyOut<T> out = decoder_.copy_forward(h, enc.node_reps);
        Tensor<T> ext = extended_distribution(out.gen.value(), out.gate.value(),
                                              out.attn.value(), cands);
        for (int64_t y = 0; y < ext.numel(); ++y) {
          if (y == special::kPadId || y == special::kBosId) continue;
          double lp = std::log(std::max(double(ext[y]), 1e-300));
          cands_all.push_back({live[hi].hyp.score + lp, hi, int32_t(y), lp});
        }
      }
      std::stable_sort(cands_all.begin(), cands_all.end(), [](const Cand& a, const Cand& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.from != b.from) return a.from < b.from;
        return a.token < b.token;
      });
      size_t take = std::min(size_t(beam), cands_all.size());
      std::vector<Live> next;
      for (size_t c = 0; c < take; ++c) {
        const Cand& cd = cands_all[c];
        Live nl;
        nl.hyp = live[cd.from].hyp;
        nl.cache = live[cd.from].cache;  // copy of shared-variable handles
        nl.hyp.ext_tokens.push_back(cd.token);
        nl.hyp.copied.push_back(cd.token >= cands.vocab_size);
        nl.hyp.score += cd.step_lp;
        if (cd.token == special::kEosId) {
          nl.hyp.completed = true;
          completed.push_back(nl.hyp);
        } else {
          next.push_back(std::move(nl));
        }
      }
      live = std::move(next);
      if (int(completed.size()) >= beam) break;
    }
    Hypothesis best;
    if (!completed.empty()) {
      best = *std::max_element(completed.begin(), completed.end(),
                               [](const Hypothesis& a, const Hypothesis& b) {
                                 return a.score < b.score;
                               });
    } else if (!live.empty()) {
      best = live[0].hyp;  // highest-scoring unfinished
      best.hit_max_len = true;
    } else {
      best.hit_max_len = true;
    }
    GenerationResult res;
    res.best = best;
    for (size_t i = 1; i < best.ext_tokens.size(); ++i) {  // skip BOS
      int32_t y = best.ext_tokens[i];
      if (y == special::kEosId) break;
      std::string s = ext_surface(y, cands);
      res.tokens.push_back(i - 1 < best.copied.size() && best.copied[i - 1] ? hook(s) : s);
    }
    return res;
  }

  // -- checkpointing --------------------------------------------------------

  std::vector<std::pair<std::string, Tensor<T>>> snapshot() const {
    std::vector<std::pair<std::string, Tensor<T>>> items;
    for (const auto& [name, v] : params_.items()) items.emplace_back("param/" + name, v.value());
    return items;
  }

  void restore(const std::vector<std::pair<std::string, Tensor<T>>>& items) {
    size_t found = 0;
    for (const auto& [name, t] : items) {
      if (name.rfind("param/", 0) != 0) continue;
      std::string pname = name.substr(6);
      if (!params_.contains(pname))
        throw CheckpointError("checkpoint parameter '" + pname + "' not in this model");
      Variable<T> v = params_.get(pname);
      if (v.shape() != t.shape())
        throw CheckpointError("shape mismatch for " + pname + ": model " + shape_str(v.shape()) +
                              " vs checkpoint " + shape_str(t.shape()));
      v.value() = t;
      ++found;
    }
    if (found != params_.items().size())
      throw CheckpointError("checkpoint is missing parameters (" + std::to_string(found) + "/" +
                            std::to_string(params_.items().size()) + ")");
  }

  std::vector<int32_t> token_chars(const std::string& surface) const {
    if (surface == special::kBos || surface == special::kEos || surface == special::kUnk ||
        surface == special::kPad)
      return {vocabs_.chars.require(surface)};
    std::vector<int32_t> out;
    for (const auto& c : utf8_chars(surface)) out.push_back(vocabs_.char_id(c));
    return out;
  }

  std::string ext_surface(int32_t ext, const CopyCandidates& cands) const {
    return ext < cands.vocab_size ? vocabs_.tokens.at(ext)
                                  : cands.extras[size_t(ext - cands.vocab_size)];
  }

 private:
  static int32_t ext_to_vocab(int32_t ext, const CopyCandidates& cands) {
    return ext < cands.vocab_size ? ext : special::kUnkId;
  }

  ModelConfig cfg_;
  Vocabs vocabs_;
  ParamStore<T> params_;
  RelationEncoder<T> relation_;
  GraphEncoder<T> encoder_;
  SeqDecoder<T> decoder_;
};

}  // namespace g2s

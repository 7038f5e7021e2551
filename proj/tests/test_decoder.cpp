#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "g2s/model.hpp"
#include "g2s/train.hpp"
#include "support/toy.hpp"

using namespace g2s;

namespace {

ModelConfig tiny_config(int64_t layers = 1) {
  ModelConfig c;
  c.d_model = 16;
  c.heads = 2;
  c.d_ff = 24;
  c.layers = layers;
  c.node_emb_dim = 10;
  c.token_emb_dim = 10;
  c.edge_emb_dim = 6;
  c.char_emb_dim = 4;
  c.char_filters = 8;
  c.char_width = 3;
  c.char_out_dim = 5;
  c.rel_hidden = 7;
  c.max_positions = 32;
  c.dropout = 0.0;
  return c;
}

}  // namespace

TEST_CASE("causal mask: gradients never reach future embeddings", "[decoder]") {
  auto corpus = g2s_test::make_toy_corpus(1);
  Vocabs v = build_vocabs(corpus);
  GraphTransformer<double> model(tiny_config(2), v, 51);
  FwdCtx<double> ctx = model.make_ctx(false, 0);
  const auto& ex = corpus[0];
  auto enc = model.encode_example(ex, ctx);
  auto cands = model.make_candidates(ex);
  auto tb = model.prepare_target(ex, cands);
  int64_t steps = int64_t(tb.gold_vocab_ids.size());

  // own the input embeddings as a leaf so their gradient is observable
  Tape<double> tape;
  TapeScope<double> scope(tape);
  Variable<double> embs_src =
      model.seq_decoder().embed_tokens(tb.prev_ids, tb.prev_chars, enc.x_global, 0, ctx);
  Variable<double> embs = Variable<double>::leaf(embs_src.value(), true);
  Variable<double> h = model.seq_decoder().forward_states(embs, enc.node_reps, ctx);
  CopyOut<double> out = model.seq_decoder().copy_forward(h, enc.node_reps);
  Variable<double> probs = model.gold_probabilities(out, tb);
  for (int64_t t = 0; t + 1 < steps; ++t) {
    Variable<double> pt = slice(probs, 0, t, 1);
    embs.zero_grad();
    tape.backward(sum_all(pt));
    for (int64_t future = t + 1; future < steps; ++future)
      for (int64_t k = 0; k < 16; ++k) {
        INFO("step " << t << " future " << future << " dim " << k);
        REQUIRE(embs.grad()[future * 16 + k] == 0.0);  // exactly
      }
  }
}

TEST_CASE("x_global enters only as an additive input shift", "[decoder]") {
  auto corpus = g2s_test::make_toy_corpus(1);
  Vocabs v = build_vocabs(corpus);
  GraphTransformer<double> model(tiny_config(1), v, 53);
  FwdCtx<double> ctx = model.make_ctx(false, 0);
  const auto& ex = corpus[0];
  auto cands = model.make_candidates(ex);
  auto tb = model.prepare_target(ex, cands);
  Rng rng(7);
  Variable<double> g = Variable<double>::constant(Tensor<double>::normal({1, 16}, rng));
  Variable<double> zero = Variable<double>::constant(Tensor<double>({1, 16}));
  Variable<double> with_g =
      model.seq_decoder().embed_tokens(tb.prev_ids, tb.prev_chars, g, 0, ctx);
  Variable<double> without =
      model.seq_decoder().embed_tokens(tb.prev_ids, tb.prev_chars, zero, 0, ctx);
  Variable<double> shifted = add(without, g);
  for (int64_t i = 0; i < with_g.numel(); ++i)
    REQUIRE(with_g.value()[i] == shifted.value()[i]);  // standard decoder + shift
}

TEST_CASE("incremental decoding matches the teacher-forced pass", "[decoder]") {
  auto corpus = g2s_test::make_toy_corpus(3);
  Vocabs v = build_vocabs(corpus);
  GraphTransformer<double> model(tiny_config(2), v, 59);
  FwdCtx<double> ctx = model.make_ctx(false, 0);
  for (const auto& ex : corpus) {
    auto enc = model.encode_example(ex, ctx);
    auto cands = model.make_candidates(ex);
    auto tb = model.prepare_target(ex, cands);
    Variable<double> embs =
        model.seq_decoder().embed_tokens(tb.prev_ids, tb.prev_chars, enc.x_global, 0, ctx);
    Variable<double> h_full = model.seq_decoder().forward_states(embs, enc.node_reps, ctx);
    CopyOut<double> full = model.seq_decoder().copy_forward(h_full, enc.node_reps);

    auto cross = model.seq_decoder().make_cross_cache(enc.node_reps);
    typename SeqDecoder<double>::StepCache cache;
    int64_t steps = int64_t(tb.prev_ids.size());
    int64_t vt = v.tokens.size();
    for (int64_t t = 0; t < steps; ++t) {
      Variable<double> x = model.seq_decoder().embed_tokens(
          {tb.prev_ids[size_t(t)]}, {tb.prev_chars[size_t(t)]}, enc.x_global, t, ctx);
      Variable<double> h_t = model.seq_decoder().step(cache, cross, x, ctx);
      CopyOut<double> inc = model.seq_decoder().copy_forward(h_t, enc.node_reps);
      for (int64_t y = 0; y < vt; ++y) {
        INFO("step " << t << " token " << y);
        REQUIRE(std::abs(inc.gen.value()[y] - full.gen.value()[t * vt + y]) < 1e-5);
      }
      for (int64_t k = 0; k < 2; ++k)
        REQUIRE(std::abs(inc.gate.value()[k] - full.gate.value()[t * 2 + k]) < 1e-5);
      int n = ex.graph.n() - 1;
      for (int64_t i = 0; i < n; ++i)
        REQUIRE(std::abs(inc.attn.value()[i] - full.attn.value()[t * n + i]) < 1e-5);
    }
  }
}

TEST_CASE("copy mixture is a valid distribution", "[decoder]") {
  auto corpus = g2s_test::make_toy_corpus(4);
  Vocabs v = build_vocabs(corpus);
  GraphTransformer<double> model(tiny_config(1), v, 61);
  const auto& ex = corpus[0];
  FwdCtx<double> ctx = model.make_ctx(false, 0);
  auto enc = model.encode_example(ex, ctx);
  auto cands = model.make_candidates(ex);
  Rng rng(123);
  for (int trial = 0; trial < 200; ++trial) {
    Variable<double> h = Variable<double>::constant(Tensor<double>::normal({1, 16}, rng, 0, 2));
    CopyOut<double> out = model.seq_decoder().copy_forward(h, enc.node_reps);
    Tensor<double> ext = model.extended_distribution(out.gen.value(), out.gate.value(),
                                                     out.attn.value(), cands);
    double sum = 0;
    for (int64_t y = 0; y < ext.numel(); ++y) {
      REQUIRE(ext[y] >= 0.0);
      sum += ext[y];
    }
    REQUIRE(sum == Catch::Approx(1.0).margin(1e-6));
  }
}

TEST_CASE("gate forced to gen reproduces the vocab softmax exactly", "[decoder]") {
  auto corpus = g2s_test::make_toy_corpus(2);
  Vocabs v = build_vocabs(corpus);
  GraphTransformer<double> model(tiny_config(1), v, 67);
  const auto& ex = corpus[0];
  FwdCtx<double> ctx = model.make_ctx(false, 0);
  auto enc = model.encode_example(ex, ctx);
  auto cands = model.make_candidates(ex);
  Rng rng(321);
  Variable<double> h = Variable<double>::constant(Tensor<double>::normal({1, 16}, rng));
  CopyOut<double> out = model.seq_decoder().copy_forward(h, enc.node_reps);
  Tensor<double> gate({2}, {1.0, 0.0});
  Tensor<double> ext = model.extended_distribution(out.gen.value(), gate, out.attn.value(), cands);
  int64_t vt = v.tokens.size();
  for (int64_t y = 0; y < vt; ++y) REQUIRE(ext[y] == out.gen.value()[y]);  // bitwise
  for (int64_t y = vt; y < ext.numel(); ++y) REQUIRE(ext[y] == 0.0);
}

TEST_CASE("copy mass sums attention over same-surface nodes", "[decoder]") {
  // two distinct nodes labeled "boy"
  auto g = parse_penman("(a / and :op1 (b / boy) :op2 (c / boy))");
  Example ex = preprocess_graph(g, {"the", "boy", "and", "the", "boy", "."}, 4, 8);
  Vocabs v = build_vocabs({ex});
  GraphTransformer<double> model(tiny_config(1), v, 71);
  FwdCtx<double> ctx = model.make_ctx(false, 0);
  auto enc = model.encode_example(ex, ctx);
  auto cands = model.make_candidates(ex);
  Rng rng(31);
  Variable<double> h = Variable<double>::constant(Tensor<double>::normal({1, 16}, rng));
  CopyOut<double> out = model.seq_decoder().copy_forward(h, enc.node_reps);
  Tensor<double> ext = model.extended_distribution(out.gen.value(), out.gate.value(),
                                                   out.attn.value(), cands);
  int boy_tok = v.tokens.id("boy");
  REQUIRE(boy_tok >= 0);
  int b1 = -1, b2 = -1;
  for (const auto& nd : ex.graph.nodes)
    if (nd.label == "boy") (b1 < 0 ? b1 : b2) = nd.id;
  double expect = out.gate.value()[0] * out.gen.value()[boy_tok] +
                  out.gate.value()[1] * (out.attn.value()[b1] + out.attn.value()[b2]);
  REQUIRE(ext[boy_tok] == Catch::Approx(expect).margin(1e-15));

  // the gold-probability path for training agrees with the dense mixture
  auto tb = model.prepare_target(ex, cands);
  auto fwd = model.forward_teacher(ex, enc, cands, tb, ctx);
  int64_t steps = int64_t(tb.gold_surface.size());
  int64_t vt = v.tokens.size();
  int n = ex.graph.n() - 1;
  for (int64_t t = 0; t < steps; ++t) {
    Tensor<double> gen_row({vt}), gate_row({2}), attn_row({int64_t(n)});
    for (int64_t y = 0; y < vt; ++y) gen_row[y] = fwd.copy.gen.value()[t * vt + y];
    gate_row[0] = fwd.copy.gate.value()[t * 2];
    gate_row[1] = fwd.copy.gate.value()[t * 2 + 1];
    for (int64_t i = 0; i < n; ++i) attn_row[i] = fwd.copy.attn.value()[t * n + i];
    Tensor<double> dist = model.extended_distribution(gen_row, gate_row, attn_row, cands);
    int32_t gold = tb.gold_ext[size_t(t)];
    REQUIRE(fwd.gold_probs.value()[t] == Catch::Approx(dist[gold]).margin(1e-12));
  }
}

TEST_CASE("beam search", "[decoder]") {
  auto corpus = g2s_test::make_toy_corpus(6);
  Vocabs v = build_vocabs(corpus);
  GraphTransformer<double> model(tiny_config(1), v, 73);

  SECTION("beam=1 equals greedy argmax decoding") {
    for (const auto& ex : corpus) {
      auto res = model.beam_search(ex, 1, 12);
      // manual greedy loop over the same public pieces
      FwdCtx<double> ctx = model.make_ctx(false, 0);
      auto enc = model.encode_example(ex, ctx);
      auto cands = model.make_candidates(ex);
      auto cross = model.seq_decoder().make_cross_cache(enc.node_reps);
      typename SeqDecoder<double>::StepCache cache;
      std::vector<int32_t> greedy{special::kBosId};
      for (int t = 0; t < 12; ++t) {
        int32_t prev = greedy.back();
        std::string surface = model.ext_surface(prev, cands);
        int32_t emb_id = prev < v.tokens.size() ? prev : special::kUnkId;
        Variable<double> x = model.seq_decoder().embed_tokens(
            {emb_id}, {model.token_chars(surface)}, enc.x_global, t, ctx);
        Variable<double> h = model.seq_decoder().step(cache, cross, x, ctx);
        CopyOut<double> out = model.seq_decoder().copy_forward(h, enc.node_reps);
        Tensor<double> ext = model.extended_distribution(out.gen.value(), out.gate.value(),
                                                         out.attn.value(), cands);
        int32_t best = -1;
        double best_p = -1;
        for (int64_t y = 0; y < ext.numel(); ++y) {
          if (y == special::kPadId || y == special::kBosId) continue;
          if (ext[y] > best_p) {
            best_p = ext[y];
            best = int32_t(y);
          }
        }
        greedy.push_back(best);
        if (best == special::kEosId) break;
      }
      REQUIRE(res.best.ext_tokens == greedy);
    }
  }
  SECTION("deterministic across runs at eval") {
    auto a = model.beam_search(corpus[1], 4, 16);
    auto b = model.beam_search(corpus[1], 4, 16);
    REQUIRE(a.best.ext_tokens == b.best.ext_tokens);
    REQUIRE(a.best.score == b.best.score);
  }
  SECTION("max_len without EOS flags the hypothesis") {
    auto res = model.beam_search(corpus[2], 2, 1);  // one step can rarely emit EOS
    if (!res.best.completed) REQUIRE(res.best.hit_max_len);
  }
  SECTION("anonymization hook rewrites copied tokens only") {
    auto hook = [](const std::string& s) { return "<" + s + ">"; };
    auto res = model.beam_search(corpus[3], 2, 12, hook);
    for (size_t i = 0; i < res.tokens.size(); ++i) {
      bool wrapped = res.tokens[i].front() == '<' && res.tokens[i].back() == '>';
      REQUIRE(wrapped == bool(res.best.copied[i]));
    }
  }
}

TEST_CASE("cross attention is structurally blind to the global node", "[decoder]") {
  auto corpus = g2s_test::make_toy_corpus(1);
  Vocabs v = build_vocabs(corpus);
  GraphTransformer<double> model(tiny_config(1), v, 79);
  FwdCtx<double> ctx = model.make_ctx(false, 0);
  const auto& ex = corpus[0];
  auto enc = model.encode_example(ex, ctx);
  int n = ex.graph.n() - 1;
  REQUIRE(enc.node_reps.shape()[0] == n);  // global row never offered as a key
  auto cands = model.make_candidates(ex);
  auto tb = model.prepare_target(ex, cands);
  auto fwd = model.forward_teacher(ex, enc, cands, tb, ctx);
  REQUIRE(fwd.copy.attn.shape()[1] == n);
}

#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "g2s/gradcheck.hpp"
#include "g2s/model.hpp"
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

template <typename T>
RelationTables<T> zero_tables(int n, int64_t d) {
  RelationTables<T> t;
  t.fwd = Variable<T>::constant(Tensor<T>({int64_t(n) * n, d}));
  t.bwd = Variable<T>::constant(Tensor<T>({int64_t(n) * n, d}));
  t.n = n;
  return t;
}

}  // namespace

TEST_CASE("node_init matches its definition", "[encoder]") {
  auto corpus = g2s_test::make_toy_corpus(3);
  Vocabs v = build_vocabs(corpus);
  GraphTransformer<double> model(tiny_config(), v, 11);
  FwdCtx<double> ctx = model.make_ctx(false, 0);

  SECTION("all parameters zero give the zero matrix") {
    for (auto [name, var] : model.params().items()) var.value().fill(0.0);
    auto in = model.make_input(corpus[0]);
    auto x0 = model.graph_encoder().node_init(in, ctx);
    REQUIRE(x0.shape() == Shape{corpus[0].graph.n(), 16});
    for (int64_t i = 0; i < x0.numel(); ++i) REQUIRE(x0.value()[i] == 0.0);
  }
  SECTION("identical labels and positions give identical rows") {
    // two leaves with the same label at the same depth
    auto g = parse_penman("(a / and :op1 (x / run-01) :op2 (y / run-01))");
    Example ex = preprocess_graph(g, {}, 4, 8);
    auto in = model.make_input(ex);
    auto x0 = model.graph_encoder().node_init(in, ctx);
    int xi = -1, yi = -1;
    for (const auto& nd : ex.graph.nodes)
      if (nd.label == "run-01") (xi < 0 ? xi : yi) = nd.id;
    for (int64_t k = 0; k < 16; ++k)
      REQUIRE(x0.value()[xi * 16 + k] == x0.value()[yi * 16 + k]);
  }
  SECTION("root and global node share the position embedding") {
    // zero everything except the position table; root row == global row
    for (auto [name, var] : model.params().items())
      if (name != "enc.pos_emb") var.value().fill(0.0);
    auto in = model.make_input(corpus[0]);
    auto x0 = model.graph_encoder().node_init(in, ctx);
    int root = corpus[0].graph.root;
    int global = corpus[0].graph.global_node();
    REQUIRE(in.positions[size_t(root)] == 0);
    for (int64_t k = 0; k < 16; ++k)
      REQUIRE(x0.value()[root * 16 + k] == x0.value()[global * 16 + k]);
  }
}

TEST_CASE("zero relation encodings reduce to vanilla attention bitwise", "[encoder]") {
  auto corpus = g2s_test::make_toy_corpus(6);
  Vocabs v = build_vocabs(corpus);
  GraphTransformer<double> model(tiny_config(), v, 13);
  FwdCtx<double> ctx = model.make_ctx(false, 0);
  const auto& blk = model.graph_encoder().blocks()[0];
  for (const auto& ex : corpus) {
    int n1 = ex.graph.n();
    auto in = model.make_input(ex);
    Variable<double> x0 = model.graph_encoder().node_init(in, ctx);
    auto rel = zero_tables<double>(n1, 16);
    auto [out, attn] = model.graph_encoder().block_forward(blk, x0, rel, ctx, 0);
    // vanilla reference: per head softmax(Q K^T / sqrt(dh)) from the same params
    auto qh = split(matmul(x0, blk.wq), 1, {8, 8});
    auto kh = split(matmul(x0, blk.wk), 1, {8, 8});
    for (int h = 0; h < 2; ++h) {
      Variable<double> scores =
          scale(matmul(qh[size_t(h)], transpose2d(kh[size_t(h)])), 1.0 / std::sqrt(8.0));
      Variable<double> weights = softmax(scores);
      for (int64_t i = 0; i < n1 * n1; ++i)
        REQUIRE(attn[size_t(h)][i] == weights.value()[i]);  // bitwise
    }
  }
}

TEST_CASE("four-term expansion equals the factored product form", "[encoder]") {
  // (x_i + r_f) Wq . Wk (x_j + r_b) expanded as content + three biases
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    int64_t d = 6, dh = 4, n = 3;
    auto X = Tensor<double>::normal({n, d}, rng);
    auto RF = Tensor<double>::normal({n * n, d}, rng);
    auto RB = Tensor<double>::normal({n * n, d}, rng);
    auto WQ = Tensor<double>::normal({d, dh}, rng);
    auto WK = Tensor<double>::normal({d, dh}, rng);
    auto xv = Variable<double>::constant(X);
    auto rf = Variable<double>::constant(RF);
    auto rb = Variable<double>::constant(RB);
    auto wq = Variable<double>::constant(WQ);
    auto wk = Variable<double>::constant(WK);
    auto q = matmul(xv, wq), k = matmul(xv, wk);
    auto qr = matmul(rf, wq), kr = matmul(rb, wk);
    auto content = matmul(q, transpose2d(k));
    auto src = reduce_sum(mul(reshape(kr, {n, n, dh}), reshape(q, {n, 1, dh})), 2);
    auto tgt = reduce_sum(mul(reshape(qr, {n, n, dh}), reshape(k, {1, n, dh})), 2);
    auto uni = reduce_sum(mul(reshape(qr, {n, n, dh}), reshape(kr, {n, n, dh})), 2);
    auto four = add(add(content, src), add(tgt, uni));
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < n; ++j) {
        double factored = 0;
        for (int64_t a = 0; a < dh; ++a) {
          double qa = 0, ka = 0;
          for (int64_t b = 0; b < d; ++b) {
            qa += (X[i * d + b] + RF[(i * n + j) * d + b]) * WQ[b * dh + a];
            ka += (X[j * d + b] + RB[(i * n + j) * d + b]) * WK[b * dh + a];
          }
          factored += qa * ka;
        }
        REQUIRE(four.value()[i * n + j] == Catch::Approx(factored).margin(1e-10));
      }
  }
}

TEST_CASE("zero node states leave only the universal relation term", "[encoder]") {
  auto corpus = g2s_test::make_toy_corpus(1);
  Vocabs v = build_vocabs(corpus);
  GraphTransformer<double> model(tiny_config(), v, 15);
  FwdCtx<double> ctx = model.make_ctx(false, 0);
  const auto& blk = model.graph_encoder().blocks()[0];
  const auto& ex = corpus[0];
  int n1 = ex.graph.n();
  Rng rng(5);
  RelationTables<double> rel;
  rel.fwd = Variable<double>::constant(Tensor<double>::normal({int64_t(n1) * n1, 16}, rng));
  rel.bwd = Variable<double>::constant(Tensor<double>::normal({int64_t(n1) * n1, 16}, rng));
  rel.n = n1;
  Variable<double> x0 = Variable<double>::constant(Tensor<double>({n1, 16}));
  auto [out, attn] = model.graph_encoder().block_forward(blk, x0, rel, ctx, 0);
  // reference: per head softmax of qr . kr only
  auto qr = split(matmul(rel.fwd, blk.wq), 1, {8, 8});
  auto kr = split(matmul(rel.bwd, blk.wk), 1, {8, 8});
  for (int h = 0; h < 2; ++h) {
    auto uni = reduce_sum(mul(reshape(qr[size_t(h)], {n1, n1, 8}),
                              reshape(kr[size_t(h)], {n1, n1, 8})), 2);
    auto weights = softmax(scale(uni, 1.0 / std::sqrt(8.0)));
    for (int64_t i = 0; i < n1 * n1; ++i)
      REQUIRE(attn[size_t(h)][i] == Catch::Approx(weights.value()[i]).margin(1e-15));
  }
}

TEST_CASE("attention rows sum to one over all nodes", "[encoder]") {
  auto corpus = g2s_test::make_toy_corpus(5);
  Vocabs v = build_vocabs(corpus);
  GraphTransformer<double> model(tiny_config(2), v, 17);
  FwdCtx<double> ctx = model.make_ctx(false, 0);
  for (const auto& ex : corpus) {
    auto enc = model.encode_example(ex, ctx);
    int n1 = ex.graph.n();
    REQUIRE(enc.attention.size() == 2);
    for (const auto& layer : enc.attention)
      for (const auto& head : layer) {
        REQUIRE(head.shape() == Shape{n1, n1});  // full connectivity, no masking
        for (int64_t i = 0; i < n1; ++i) {
          double row = 0;
          for (int64_t j = 0; j < n1; ++j) row += head[i * n1 + j];
          REQUIRE(row == Catch::Approx(1.0).margin(1e-6));
        }
      }
  }
}

TEST_CASE("block with zero sublayer weights is layer norm of input", "[encoder]") {
  auto corpus = g2s_test::make_toy_corpus(1);
  Vocabs v = build_vocabs(corpus);
  GraphTransformer<double> model(tiny_config(), v, 19);
  for (auto [name, var] : model.params().items())
    if (name.rfind("enc.block0", 0) == 0 && name.find(".ln") == std::string::npos)
      var.value().fill(0.0);
  FwdCtx<double> ctx = model.make_ctx(false, 0);
  const auto& ex = corpus[0];
  int n1 = ex.graph.n();
  Rng rng(6);
  Variable<double> x0 = Variable<double>::constant(Tensor<double>::normal({n1, 16}, rng));
  auto rel = zero_tables<double>(n1, 16);
  auto [out, attn] = model.graph_encoder().block_forward(
      model.graph_encoder().blocks()[0], x0, rel, ctx, 0);
  auto expect = layer_norm(layer_norm(x0));
  for (int64_t i = 0; i < out.numel(); ++i)
    REQUIRE(out.value()[i] == Catch::Approx(expect.value()[i]).margin(1e-12));
}

TEST_CASE("block forward is deterministic under a fixed dropout seed", "[encoder]") {
  auto corpus = g2s_test::make_toy_corpus(1);
  Vocabs v = build_vocabs(corpus);
  ModelConfig cfg = tiny_config();
  cfg.dropout = 0.3;
  auto run = [&]() {
    GraphTransformer<float> model(cfg, v, 23);
    FwdCtx<float> ctx = model.make_ctx(true, 321);
    return model.encode_example(corpus[0], ctx).node_reps.value();
  };
  auto a = run();
  auto b = run();
  REQUIRE(a.vec() == b.vec());
}

TEST_CASE("L=0 returns the initialized node states", "[encoder]") {
  auto corpus = g2s_test::make_toy_corpus(1);
  Vocabs v = build_vocabs(corpus);
  GraphTransformer<double> model(tiny_config(0), v, 29);
  FwdCtx<double> ctx = model.make_ctx(false, 0);
  const auto& ex = corpus[0];
  auto in = model.make_input(ex);
  auto x0 = model.graph_encoder().node_init(in, ctx);
  auto enc = model.encode_example(ex, ctx);
  int n = ex.graph.n() - 1;
  REQUIRE(enc.node_reps.shape() == Shape{n, 16});  // global row excluded
  for (int64_t i = 0; i < n * 16; ++i) REQUIRE(enc.node_reps.value()[i] == x0.value()[i]);
  for (int64_t k = 0; k < 16; ++k)
    REQUIRE(enc.x_global.value()[k] == x0.value()[n * 16 + k]);
}

TEST_CASE("gradients flow through a full encoder block", "[encoder]") {
  // a 3-node graph and a 5-node graph with a reentrancy
  std::vector<Example> fixtures = {
      preprocess_graph(parse_penman("(a / alpha :ARG0 (b / beta) :ARG1 (c / gamma))"), {}, 4, 8),
      preprocess_graph(parse_penman("(a / alpha :ARG0 (b / beta :mod (d / delta)) "
                                    ":ARG1 (c / gamma :ARG0 d))"),
                       {}, 4, 8)};
  auto corpus = g2s_test::make_toy_corpus(1);
  Vocabs v = build_vocabs(corpus);
  for (const auto& ex : fixtures) {
    Vocabs fv = build_vocabs({ex});
    GraphTransformer<double> model(tiny_config(1), fv, 31);
    std::vector<Variable<double>> inputs;
    for (auto& [name, var] : model.params().items()) inputs.push_back(var);
    auto f = [&](std::vector<Variable<double>>& in) {
      (void)in;
      FwdCtx<double> ctx = model.make_ctx(false, 0);
      auto enc = model.encode_example(ex, ctx);
      return sum_all(mul(enc.node_reps, enc.node_reps));
    };
    auto rep = grad_check<double>(f, inputs, 1e-5, 20, 555);
    INFO("n=" << ex.graph.n() - 1 << " worst " << rep.worst);
    REQUIRE(rep.finite);
    REQUIRE(rep.max_rel_err < 1e-3);
  }
}

TEST_CASE("encoder is equivariant under node permutations", "[encoder]") {
  auto corpus = g2s_test::make_toy_corpus(8);
  Vocabs v = build_vocabs(corpus);
  GraphTransformer<double> model(tiny_config(2), v, 37);
  FwdCtx<double> ctx = model.make_ctx(false, 0);
  Rng rng(404);
  for (const auto& ex : corpus) {
    LabeledGraph orig = strip_augmentation(ex.graph);
    int n = orig.n();
    std::vector<int> perm(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) perm[size_t(i)] = i;
    for (size_t i = size_t(n); i > 1; --i)
      std::swap(perm[i - 1], perm[size_t(rng.next_below(uint64_t(i)))]);
    LabeledGraph mapped;
    mapped.kind = orig.kind;
    std::vector<int> inv(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) inv[size_t(perm[size_t(i)])] = i;
    // node old i becomes new perm[i]
    mapped.nodes.resize(size_t(n));
    for (int i = 0; i < n; ++i) mapped.nodes[size_t(perm[size_t(i)])] = NodeRecord(
        perm[size_t(i)], orig.nodes[size_t(i)].label);
    for (const auto& e : orig.edges)
      mapped.add_edge(perm[size_t(e.src)], perm[size_t(e.dst)], e.label);
    mapped.root = perm[size_t(orig.root)];
    Example pex = preprocess_graph(mapped, ex.tokens, 4, 8);
    auto a = model.encode_example(ex, ctx);
    auto b = model.encode_example(pex, ctx);
    for (int i = 0; i < n; ++i)
      for (int64_t k = 0; k < 16; ++k) {
        INFO("node " << i << " dim " << k);
        REQUIRE(a.node_reps.value()[i * 16 + k] ==
                Catch::Approx(b.node_reps.value()[perm[size_t(i)] * 16 + k]).margin(1e-9));
      }
    for (int64_t k = 0; k < 16; ++k)
      REQUIRE(a.x_global.value()[k] == Catch::Approx(b.x_global.value()[k]).margin(1e-9));
  }
}

TEST_CASE("non-finite scores are reported with pair and head", "[encoder]") {
  auto corpus = g2s_test::make_toy_corpus(1);
  Vocabs v = build_vocabs(corpus);
  GraphTransformer<double> model(tiny_config(), v, 41);
  FwdCtx<double> ctx = model.make_ctx(false, 0);
  const auto& ex = corpus[0];
  int n1 = ex.graph.n();
  Tensor<double> bad({n1, 16});
  bad[0] = std::numeric_limits<double>::infinity();
  Variable<double> x0 = Variable<double>::constant(bad);
  auto rel = zero_tables<double>(n1, 16);
  try {
    model.graph_encoder().block_forward(model.graph_encoder().blocks()[0], x0, rel, ctx, 0);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    std::string msg = e.what();
    REQUIRE(msg.find("pair") != std::string::npos);
    REQUIRE(msg.find("head") != std::string::npos);
  }
}

#include <catch2/catch_amalgamated.hpp>

#include "g2s/gradcheck.hpp"
#include "g2s/model.hpp"
#include "support/toy.hpp"

using namespace g2s;

namespace {

Vocabs toy_vocabs(const std::vector<Example>& exs) { return build_vocabs(exs); }

template <typename T>
void zero_params(ParamStore<T>& ps) {
  for (auto [name, v] : ps.items()) v.value().fill(T(0));
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.d_model = 16;
  c.heads = 2;
  c.d_ff = 24;
  c.layers = 1;
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

TEST_CASE("encode_path basics", "[relation]") {
  auto corpus = g2s_test::make_toy_corpus(4);
  Vocabs v = toy_vocabs(corpus);
  ParamStore<double> ps(3);
  RelationEncoder<double> rel(ps, v.edge_labels.size(), 6, 7, 16);

  SECTION("all parameters zero give a zero encoding for any path") {
    zero_params(ps);
    auto enc = rel.encode_paths({{"ARG0"}, {"ARG1", "R_ARG0"}, {"self"}}, v.edge_labels);
    REQUIRE(enc.shape() == Shape{3, 14});
    for (int64_t i = 0; i < enc.numel(); ++i) REQUIRE(enc.value()[i] == 0.0);
  }
  SECTION("encoding depends only on the label sequence") {
    auto a = rel.encode_paths({{"ARG0", "ARG1"}, {"self"}}, v.edge_labels);
    auto b = rel.encode_paths({{"self"}, {"R_ARG1"}, {"ARG0", "ARG1"}}, v.edge_labels);
    for (int64_t k = 0; k < 14; ++k) {
      REQUIRE(a.value()[0 * 14 + k] == b.value()[2 * 14 + k]);
      REQUIRE(a.value()[1 * 14 + k] == b.value()[0 * 14 + k]);
    }
  }
  SECTION("unknown labels are an error (closed vocabulary)") {
    REQUIRE_THROWS_AS(rel.encode_paths({{"NOT-A-ROLE"}}, v.edge_labels), VocabError);
  }
}

TEST_CASE("split projection behaves like Eq-style halves", "[relation]") {
  auto corpus = g2s_test::make_toy_corpus(2);
  Vocabs v = toy_vocabs(corpus);

  SECTION("zero projection gives zero halves") {
    ParamStore<double> ps(4);
    RelationEncoder<double> rel(ps, v.edge_labels.size(), 6, 7, 16);
    ps.get("rel.w_r").value().fill(0.0);
    const auto& ex = corpus[0];
    auto sel = select_paths(ex.paths, PathMode::Test, 0);
    auto dedup = dedup_paths({{&ex.paths, &sel}});
    auto unique = rel.encode_paths(dedup.unique, v.edge_labels);
    auto tables = rel.tables_for_graph(unique, dedup.graphs[0], ex.graph.n());
    for (int64_t i = 0; i < tables.fwd.numel(); ++i) {
      REQUIRE(tables.fwd.value()[i] == 0.0);
      REQUIRE(tables.bwd.value()[i] == 0.0);
    }
  }
  SECTION("identity-padded projection copies slices") {
    // w_r = [I_14 ; 0] horizontally duplicated so fwd half = r, bwd half = r padded
    ParamStore<double> ps(5);
    RelationEncoder<double> rel(ps, v.edge_labels.size(), 6, 7, 16);
    Variable<double> w = ps.get("rel.w_r");  // [14, 32]
    w.value().fill(0.0);
    for (int64_t i = 0; i < 14; ++i) {
      w.value()[i * 32 + i] = 1.0;        // fwd half rows 0..13
      w.value()[i * 32 + 16 + i] = 1.0;   // bwd half same copy
    }
    auto enc = rel.encode_paths({{"ARG0"}, {"ARG1"}}, v.edge_labels);
    auto tables = rel.tables_for_graph(
        enc, DedupResult::PerGraph{{0, 1, 2}, {0, 1}, {1.0, 1.0}}, 0);
    // row r of fwd = enc row r zero-padded to 16
    for (int64_t r = 0; r < 2; ++r)
      for (int64_t k = 0; k < 16; ++k) {
        double expect = k < 14 ? enc.value()[r * 14 + k] : 0.0;
        REQUIRE(tables.fwd.value()[r * 16 + k] == expect);
        REQUIRE(tables.bwd.value()[r * 16 + k] == expect);
      }
  }
}

TEST_CASE("encode tables: averaging and dedup equivalence", "[relation]") {
  // graph with two tied shortest paths between 0 and 2
  LabeledGraph g;
  g.add_node("a");
  g.add_node("b");
  g.add_node("c");
  g.add_edge(0, 1, "p");
  g.add_edge(0, 1, "q");
  g.add_edge(1, 2, "r");
  Example ex;
  ex.stats = graph_stats(g);
  ex.graph = augment(g);
  ex.positions = absolute_positions(ex.graph);
  ex.paths = all_shortest_paths(ex.graph);

  auto corpus = g2s_test::make_toy_corpus(2);
  Vocabs v;
  v.edge_labels.add("p");
  v.edge_labels.add("q");
  v.edge_labels.add("r");
  v.edge_labels.add("R_p");
  v.edge_labels.add("R_q");
  v.edge_labels.add("R_r");
  v.edge_labels.add("self");
  v.edge_labels.add("global");
  v.edge_labels.add("R_global");

  ParamStore<double> ps(6);
  RelationEncoder<double> rel(ps, v.edge_labels.size(), 6, 7, 16);

  SECTION("test mode averages tied path encodings before the split") {
    auto sel = select_paths(ex.paths, PathMode::Test, 0);
    auto dedup = dedup_paths({{&ex.paths, &sel}});
    auto unique = rel.encode_paths(dedup.unique, v.edge_labels);
    auto tables = rel.tables_for_graph(unique, dedup.graphs[0], ex.graph.n());
    // pair (0,2) has paths [p,r] and [q,r]
    auto single = rel.encode_paths({{"p", "r"}, {"q", "r"}}, v.edge_labels);
    Variable<double> avg = scale(add(slice(single, 0, 0, 1), slice(single, 0, 1, 1)), 0.5);
    Variable<double> both = matmul(avg, rel.split_projection());
    int n = ex.graph.n();
    int64_t row = 0 * n + 2;
    for (int64_t k = 0; k < 16; ++k) {
      REQUIRE(tables.fwd.value()[row * 16 + k] ==
              Catch::Approx(both.value()[k]).margin(1e-14));
      REQUIRE(tables.bwd.value()[row * 16 + k] ==
              Catch::Approx(both.value()[16 + k]).margin(1e-14));
    }
  }
  SECTION("unique shortest paths make train and test tables identical") {
    // pair (1,2) has exactly one path; check equality on that row
    auto str = select_paths(ex.paths, PathMode::Train, 9);
    auto ste = select_paths(ex.paths, PathMode::Test, 9);
    auto dtr = dedup_paths({{&ex.paths, &str}});
    auto dte = dedup_paths({{&ex.paths, &ste}});
    auto ttr = rel.tables_for_graph(rel.encode_paths(dtr.unique, v.edge_labels), dtr.graphs[0],
                                    ex.graph.n());
    auto tte = rel.tables_for_graph(rel.encode_paths(dte.unique, v.edge_labels), dte.graphs[0],
                                    ex.graph.n());
    int n = ex.graph.n();
    int64_t row = 1 * n + 2;
    for (int64_t k = 0; k < 16; ++k)
      REQUIRE(ttr.fwd.value()[row * 16 + k] == tte.fwd.value()[row * 16 + k]);
  }
  SECTION("dedup-built tables equal naive per-pair encoding elementwise") {
    auto sel = select_paths(ex.paths, PathMode::Test, 0);
    auto dedup = dedup_paths({{&ex.paths, &sel}});
    auto unique = rel.encode_paths(dedup.unique, v.edge_labels);
    auto tables = rel.tables_for_graph(unique, dedup.graphs[0], ex.graph.n());
    int n = ex.graph.n();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const auto& alts = ex.paths.at(i, j);
        double w = 1.0 / double(alts.size());
        // accumulate exactly like the gather: sum of w-scaled encodings
        Variable<double> sum;
        for (const auto& p : alts) {
          Variable<double> e = scale(rel.encode_paths({p}, v.edge_labels), w);
          sum = sum.defined() ? add(sum, e) : e;
        }
        Variable<double> proj = matmul(sum, rel.split_projection());
        int64_t row = int64_t(i) * n + j;
        for (int64_t k = 0; k < 16; ++k) {
          INFO("pair " << i << "->" << j << " k=" << k);
          REQUIRE(tables.fwd.value()[row * 16 + k] == proj.value()[k]);  // exact
          REQUIRE(tables.bwd.value()[row * 16 + k] == proj.value()[16 + k]);
        }
      }
  }
  SECTION("self-pair rows are identical across nodes") {
    auto sel = select_paths(ex.paths, PathMode::Test, 0);
    auto dedup = dedup_paths({{&ex.paths, &sel}});
    auto unique = rel.encode_paths(dedup.unique, v.edge_labels);
    auto tables = rel.tables_for_graph(unique, dedup.graphs[0], ex.graph.n());
    int n = ex.graph.n();
    for (int i = 1; i < n; ++i)
      for (int64_t k = 0; k < 16; ++k)
        REQUIRE(tables.fwd.value()[(int64_t(i) * n + i) * 16 + k] ==
                tables.fwd.value()[(0 * n + 0) * 16 + k]);
  }
}

TEST_CASE("gradients flow through path encoding", "[relation]") {
  auto corpus = g2s_test::make_toy_corpus(2);
  Vocabs v = toy_vocabs(corpus);
  for (size_t len = 1; len <= 8; ++len) {
    ParamStore<double> ps(7 + len);
    RelationEncoder<double> rel(ps, v.edge_labels.size(), 5, 4, 8);
    std::vector<std::string> path;
    std::vector<std::string> pool = {"ARG0", "ARG1", "R_ARG0", "self", "global"};
    for (size_t t = 0; t < len; ++t) path.push_back(pool[t % pool.size()]);
    std::vector<Variable<double>> inputs;
    for (auto& [name, var] : ps.items()) inputs.push_back(var);
    auto f = [&](std::vector<Variable<double>>& in) {
      (void)in;  // the params themselves are the inputs
      auto enc = rel.encode_paths({path, {"ARG1"}}, v.edge_labels);
      return sum_all(mul(enc, enc));
    };
    auto rep = grad_check<double>(f, inputs, 1e-5, 20, 99 + len);
    INFO("len " << len << " worst " << rep.worst);
    REQUIRE(rep.finite);
    REQUIRE(rep.max_rel_err < 1e-4);
  }
}

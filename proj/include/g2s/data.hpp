#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "g2s/conllu.hpp"
#include "g2s/graph.hpp"
#include "g2s/paths.hpp"
#include "g2s/penman.hpp"
#include "g2s/vocab.hpp"

namespace g2s {

using json = nlohmann::json;

// one preprocessed training/evaluation item
struct Example {
  LabeledGraph graph;  // augmented
  std::vector<int> positions;
  GraphStats stats;                  // of the unaugmented graph
  PathTable paths;
  std::vector<std::string> tokens;  // reference sentence tokens; may be empty
};

inline std::vector<std::string> split_tokens(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  std::string t;
  while (in >> t) out.push_back(t);
  return out;
}

inline Example preprocess_graph(const LabeledGraph& unaug, std::vector<std::string> tokens,
                                int path_cap, int max_path_len) {
  Example ex;
  ex.stats = graph_stats(unaug);
  ex.graph = augment(unaug);
  ex.positions = absolute_positions(ex.graph);
  ex.paths = all_shortest_paths(ex.graph, path_cap, max_path_len);
  ex.tokens = std::move(tokens);
  return ex;
}

// ---------------------------------------------------------------------------
// raw corpus files

struct RawBlock {
  std::string body;                  // graph text (PENMAN or CoNLL-U rows)
  std::vector<std::string> tokens;   // from "# ::snt" / "# text =" metadata
  size_t first_line = 0;
};

enum class CorpusFormat { Penman, Conllu };

// Blank-line separated blocks. PENMAN blocks carry the reference sentence in
// a "# ::snt ..." comment; CoNLL-U blocks in "# text = ..." (or "# target =",
// which wins when both appear).
inline std::vector<RawBlock> read_blocks(std::istream& in, CorpusFormat format) {
  std::vector<RawBlock> blocks;
  RawBlock cur;
  std::string line;
  size_t lineno = 0;
  std::string target_override;
  auto flush = [&]() {
    if (!cur.body.empty()) {
      if (!target_override.empty()) cur.tokens = split_tokens(target_override);
      blocks.push_back(cur);
    }
    cur = RawBlock{};
    target_override.clear();
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string trimmed = line;
    size_t ws = trimmed.find_first_not_of(" \t");
    trimmed = ws == std::string::npos ? "" : trimmed.substr(ws);
    if (trimmed.empty()) {
      flush();
      continue;
    }
    if (cur.body.empty() && cur.tokens.empty() && target_override.empty())
      cur.first_line = lineno;
    if (trimmed[0] == '#') {
      if (trimmed.rfind("# ::snt", 0) == 0)
        cur.tokens = split_tokens(trimmed.substr(7));
      else if (trimmed.rfind("# target =", 0) == 0)
        target_override = trimmed.substr(10);
      else if (trimmed.rfind("# text =", 0) == 0 && cur.tokens.empty())
        cur.tokens = split_tokens(trimmed.substr(8));
      if (format == CorpusFormat::Conllu) cur.body += line + "\n";  // parser skips comments
      continue;
    }
    cur.body += line + "\n";
  }
  flush();
  return blocks;
}

inline std::vector<RawBlock> read_blocks_file(const std::string& path, CorpusFormat format) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return read_blocks(in, format);
}

// ---------------------------------------------------------------------------
// JSONL serialization of preprocessed examples

inline json to_json(const Example& ex) {
  json nodes = json::array();
  for (const auto& n : ex.graph.nodes) nodes.push_back({{"id", n.id}, {"label", n.label}});
  json edges = json::array();
  for (const auto& e : ex.graph.edges)
    edges.push_back({{"src", e.src}, {"dst", e.dst}, {"label", e.label}});
  json paths = json::array();
  int n = ex.paths.n;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      paths.push_back({{"src", i}, {"dst", j}, {"paths", ex.paths.at(i, j)}});
  return json{{"kind", ex.graph.kind == GraphKind::Amr ? "amr" : "dependency"},
              {"nodes", nodes},
              {"edges", edges},
              {"root", ex.graph.root},
              {"positions", ex.positions},
              {"stats",
               {{"size", ex.stats.size},
                {"diameter", ex.stats.diameter},
                {"reentrancies", ex.stats.reentrancies},
                {"disconnected", ex.stats.disconnected}}},
              {"tokens", ex.tokens},
              {"paths", paths}};
}

inline Example example_from_json(const json& j) {
  Example ex;
  ex.graph.kind = j.at("kind").get<std::string>() == "amr" ? GraphKind::Amr : GraphKind::Dependency;
  ex.graph.augmented = true;
  for (const auto& n : j.at("nodes")) {
    int id = ex.graph.add_node(n.at("label").get<std::string>());
    if (id != n.at("id").get<int>()) throw DataError("jsonl: node ids must be dense and ordered");
  }
  for (const auto& e : j.at("edges"))
    ex.graph.add_edge(e.at("src").get<int>(), e.at("dst").get<int>(),
                      e.at("label").get<std::string>());
  ex.graph.root = j.at("root").get<int>();
  ex.positions = j.at("positions").get<std::vector<int>>();
  const auto& st = j.at("stats");
  ex.stats.size = st.at("size").get<int>();
  ex.stats.diameter = st.at("diameter").get<int>();
  ex.stats.reentrancies = st.at("reentrancies").get<int>();
  ex.stats.disconnected = st.value("disconnected", false);
  ex.tokens = j.at("tokens").get<std::vector<std::string>>();
  int n = ex.graph.n();
  ex.paths.n = n;
  ex.paths.alt.assign(size_t(n) * size_t(n), {});
  for (const auto& p : j.at("paths")) {
    int src = p.at("src").get<int>(), dst = p.at("dst").get<int>();
    ex.paths.alt[size_t(src) * size_t(n) + size_t(dst)] =
        p.at("paths").get<std::vector<std::vector<std::string>>>();
  }
  for (const auto& alts : ex.paths.alt)
    if (alts.empty()) throw DataError("jsonl: incomplete path table");
  return ex;
}

inline void write_examples_jsonl(const std::string& path, const std::vector<Example>& exs) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& ex : exs) out << to_json(ex).dump() << "\n";
}

inline std::vector<Example> read_examples_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::vector<Example> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(example_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (out.empty()) throw DataError(path + ": no examples");
  return out;
}

// ---------------------------------------------------------------------------
// vocabularies

inline Vocabs build_vocabs(const std::vector<Example>& exs) {
  Vocabs v;
  for (const auto& ex : exs) {
    int n = ex.graph.n() - 1;  // global node uses a dedicated embedding
    for (int i = 0; i < n; ++i) {
      v.node_labels.add(ex.graph.nodes[size_t(i)].label);
      for (const auto& c : ex.graph.nodes[size_t(i)].char_seq) v.chars.add(c);
    }
    for (const auto& e : ex.graph.edges) v.edge_labels.add(e.label);
    for (const auto& t : ex.tokens) {
      v.tokens.add(t);
      for (const auto& c : utf8_chars(t)) v.chars.add(c);
    }
  }
  // synthesized by the path table for node->global pairs
  v.edge_labels.add(std::string(kReversePrefix) + kGlobalLabel);
  return v;
}

inline json vocabs_to_json(const Vocabs& v) {
  return json{{"node_labels", v.node_labels.items()},
              {"edge_labels", v.edge_labels.items()},
              {"tokens", v.tokens.items()},
              {"chars", v.chars.items()}};
}

inline Vocabs vocabs_from_json(const json& j) {
  Vocabs v;
  auto load = [](Vocab& dst, const json& arr, int32_t reserved) {
    auto items = arr.get<std::vector<std::string>>();
    for (size_t i = 0; i < items.size(); ++i) {
      if (i < size_t(reserved)) {
        if (dst.at(int32_t(i)) != items[i])
          throw DataError("vocab file disagrees on reserved symbols");
        continue;
      }
      dst.add(items[i]);
    }
  };
  load(v.node_labels, j.at("node_labels"), 1);
  load(v.edge_labels, j.at("edge_labels"), 0);
  load(v.tokens, j.at("tokens"), 4);
  load(v.chars, j.at("chars"), 4);
  return v;
}

// ---------------------------------------------------------------------------
// batching: group by node count to limit padding, shuffle batch order per epoch

inline std::vector<std::vector<size_t>> make_batches(const std::vector<Example>& exs,
                                                     size_t batch_size) {
  std::vector<size_t> order(exs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return exs[a].graph.n() < exs[b].graph.n();
  });
  std::vector<std::vector<size_t>> batches;
  for (size_t i = 0; i < order.size(); i += batch_size) {
    std::vector<size_t> b(order.begin() + int64_t(i),
                          order.begin() + int64_t(std::min(order.size(), i + batch_size)));
    batches.push_back(std::move(b));
  }
  return batches;
}

inline std::vector<size_t> epoch_batch_order(size_t num_batches, uint64_t seed, uint64_t epoch) {
  std::vector<size_t> idx(num_batches);
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(sub_seed(seed, "batch-order", epoch));
  for (size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[size_t(rng.next_below(uint64_t(i)))]);
  return idx;
}

}  // namespace g2s

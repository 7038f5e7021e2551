#pragma once

#include <algorithm>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "g2s/graph.hpp"
#include "g2s/rng.hpp"

namespace g2s {

struct RelationPath {
  std::vector<std::string> labels;
  int src = 0;
  int dst = 0;
  int length() const { return int(labels.size()); }
};

// All retained shortest label sequences for every ordered node pair of an
// augmented graph, in lexicographic order, at most `cap` per pair.
struct PathTable {
  int n = 0;  // node count including the global node
  std::vector<std::vector<std::vector<std::string>>> alt;  // [i*n+j]

  const std::vector<std::vector<std::string>>& at(int i, int j) const {
    return alt[size_t(i) * size_t(n) + size_t(j)];
  }
};

// Global-labeled edges are excluded from ordinary-pair search: they would
// put every pair within two hops of every other and erase the relation
// signal. Pairs that involve the global node get fixed one-label paths, and
// self pairs get ["self"].
inline PathTable all_shortest_paths(const LabeledGraph& g, int cap = 4, int max_len = 8) {
  if (!g.augmented) throw DataError("all_shortest_paths: expects an augmented graph");
  if (cap < 1) throw DataError("all_shortest_paths: cap must be >= 1");
  if (max_len < 1) throw DataError("all_shortest_paths: max_len must be >= 1");
  int n = g.n();
  int global = g.global_node();
  PathTable table;
  table.n = n;
  table.alt.resize(size_t(n) * size_t(n));

  // ordinary arcs: directed, no self loops, no global edges
  struct Arc {
    int dst;
    const std::string* label;
  };
  std::vector<std::vector<Arc>> adj(static_cast<size_t>(n));
  for (const auto& e : g.edges) {
    if (e.src == e.dst || e.label == kGlobalLabel) continue;
    adj[size_t(e.src)].push_back({e.dst, &e.label});
  }
  for (auto& arcs : adj)
    std::sort(arcs.begin(), arcs.end(), [](const Arc& a, const Arc& b) {
      return *a.label != *b.label ? *a.label < *b.label : a.dst < b.dst;
    });

  std::string rev_global = std::string(kReversePrefix) + kGlobalLabel;
  for (int i = 0; i < n; ++i) {
    table.alt[size_t(i) * size_t(n) + size_t(i)] = {{kSelfLabel}};
    if (i != global) {
      table.alt[size_t(global) * size_t(n) + size_t(i)] = {{kGlobalLabel}};
      table.alt[size_t(i) * size_t(n) + size_t(global)] = {{rev_global}};
    }
  }

  // Dynamic program over the shortest-path DAG of each source: a node keeps
  // the `cap` lexicographically smallest label sequences reaching it. A full
  // sequence among a target's cap smallest must route through one of its
  // relay's cap smallest prefixes, so the truncation is canonical: the
  // retained set depends only on labels, never on node numbering.
  using SeqSet = std::vector<std::vector<std::string>>;
  std::vector<int> dist(static_cast<size_t>(n));
  std::vector<SeqSet> seqs(static_cast<size_t>(n));
  std::vector<int> order(static_cast<size_t>(n));
  for (int src = 0; src < n; ++src) {
    if (src == global) continue;
    std::fill(dist.begin(), dist.end(), -1);
    std::deque<int> q{src};
    dist[size_t(src)] = 0;
    while (!q.empty()) {
      int u = q.front();
      q.pop_front();
      for (const Arc& a : adj[size_t(u)])
        if (dist[size_t(a.dst)] < 0) {
          dist[size_t(a.dst)] = dist[size_t(u)] + 1;
          q.push_back(a.dst);
        }
    }
    for (auto& s : seqs) s.clear();
    seqs[size_t(src)] = {{}};
    int reached = 0;
    for (int v = 0; v < n; ++v)
      if (dist[size_t(v)] >= 0) order[size_t(reached++)] = v;
    std::sort(order.begin(), order.begin() + reached,
              [&](int a, int b) { return dist[size_t(a)] < dist[size_t(b)]; });
    for (int oi = 0; oi < reached; ++oi) {
      int u = order[size_t(oi)];
      if (seqs[size_t(u)].empty() && u != src) continue;
      for (const Arc& a : adj[size_t(u)]) {
        if (dist[size_t(a.dst)] != dist[size_t(u)] + 1) continue;
        SeqSet& dst_set = seqs[size_t(a.dst)];
        for (const auto& prefix : seqs[size_t(u)]) {
          std::vector<std::string> s = prefix;
          s.push_back(*a.label);
          auto pos = std::lower_bound(dst_set.begin(), dst_set.end(), s);
          if (pos != dst_set.end() && *pos == s) continue;
          if (int(dst_set.size()) == cap) {
            if (pos == dst_set.end()) continue;  // not among the cap smallest
            dst_set.pop_back();
            pos = std::lower_bound(dst_set.begin(), dst_set.end(), s);
          }
          dst_set.insert(pos, std::move(s));
        }
      }
    }
    for (int dst = 0; dst < n; ++dst) {
      if (dst == src || dst == global) continue;
      if (dist[size_t(dst)] < 0)
        throw DataError("no path between nodes " + std::to_string(src) + " and " +
                        std::to_string(dst) + " (graph not connected?)");
      auto& out = table.alt[size_t(src) * size_t(n) + size_t(dst)];
      for (const auto& full : seqs[size_t(dst)]) {
        std::vector<std::string> s = full;
        if (int(s.size()) > max_len)
          s.erase(s.begin(), s.end() - max_len);  // keep the final labels
        // suffix truncation can collide previously distinct sequences
        if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(std::move(s));
      }
    }
  }
  return table;
}

enum class PathMode { Train, Test };

struct PairChoice {
  std::vector<int> indices;     // into PathTable::at(i,j)
  std::vector<double> weights;  // sums to 1
};

struct PathSelection {
  int n = 0;
  std::vector<PairChoice> choice;  // [i*n+j]

  const PairChoice& at(int i, int j) const { return choice[size_t(i) * size_t(n) + size_t(j)]; }
};

// Train: one uniformly sampled path per pair, keyed by (seed, i, j) so the
// draw is reproducible. Test: every retained path with weight 1/k.
inline PathSelection select_paths(const PathTable& table, PathMode mode, uint64_t seed) {
  PathSelection sel;
  sel.n = table.n;
  sel.choice.resize(table.alt.size());
  for (int i = 0; i < table.n; ++i)
    for (int j = 0; j < table.n; ++j) {
      const auto& alts = table.at(i, j);
      auto& c = sel.choice[size_t(i) * size_t(table.n) + size_t(j)];
      int k = int(alts.size());
      if (k == 0) throw DataError("select_paths: empty path set");
      if (mode == PathMode::Train || k == 1) {
        Rng rng(sub_seed(seed, "path", uint64_t(i), uint64_t(j)));
        c.indices = {k == 1 ? 0 : int(rng.next_below(uint64_t(k)))};
        c.weights = {1.0};
      } else {
        c.indices.resize(size_t(k));
        c.weights.assign(size_t(k), 1.0 / double(k));
        for (int a = 0; a < k; ++a) c.indices[size_t(a)] = a;
      }
    }
  return sel;
}

// Batch-wide deduplication: each distinct label sequence is encoded once and
// every pair resolves through an index (plus averaging weight).
struct DedupResult {
  std::vector<std::vector<std::string>> unique;
  struct PerGraph {
    std::vector<int64_t> offsets;  // n*n + 1 entries
    std::vector<int32_t> indices;  // into unique
    std::vector<double> weights;
  };
  std::vector<PerGraph> graphs;
};

inline DedupResult dedup_paths(
    const std::vector<std::pair<const PathTable*, const PathSelection*>>& batch) {
  if (batch.empty()) throw DataError("dedup_paths: empty batch");
  DedupResult res;
  std::unordered_map<std::string, int32_t> seen;
  auto intern = [&](const std::vector<std::string>& labels) {
    std::string key;
    for (const auto& l : labels) {
      key += l;
      key += '\x1f';
    }
    auto it = seen.find(key);
    if (it != seen.end()) return it->second;
    int32_t id = int32_t(res.unique.size());
    res.unique.push_back(labels);
    seen.emplace(std::move(key), id);
    return id;
  };
  for (const auto& [table, sel] : batch) {
    if (table->n != sel->n) throw DataError("dedup_paths: table/selection size mismatch");
    DedupResult::PerGraph pg;
    pg.offsets.push_back(0);
    for (int i = 0; i < table->n; ++i)
      for (int j = 0; j < table->n; ++j) {
        const auto& alts = table->at(i, j);
        const auto& c = sel->at(i, j);
        for (size_t a = 0; a < c.indices.size(); ++a) {
          pg.indices.push_back(intern(alts[size_t(c.indices[a])]));
          pg.weights.push_back(c.weights[a]);
        }
        pg.offsets.push_back(int64_t(pg.indices.size()));
      }
    res.graphs.push_back(std::move(pg));
  }
  return res;
}

}  // namespace g2s

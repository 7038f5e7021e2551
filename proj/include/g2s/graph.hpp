#pragma once

#include <algorithm>
#include <deque>
#include <string>
#include <unordered_set>
#include <vector>

#include "g2s/errors.hpp"
#include "g2s/unicode.hpp"

namespace g2s {

inline constexpr const char* kReversePrefix = "R_";
inline constexpr const char* kSelfLabel = "self";
inline constexpr const char* kGlobalLabel = "global";
inline constexpr const char* kGlobalNodeLabel = "<global>";

inline bool is_reverse_label(const std::string& l) { return l.rfind(kReversePrefix, 0) == 0; }

struct NodeRecord {
  int id = 0;
  std::string label;
  std::vector<std::string> char_seq;  // code points of label

  NodeRecord() = default;
  NodeRecord(int id, std::string lab) : id(id), label(std::move(lab)), char_seq(utf8_chars(label)) {}
};

struct EdgeRecord {
  int src = 0;
  int dst = 0;
  std::string label;

  bool operator==(const EdgeRecord& o) const {
    return src == o.src && dst == o.dst && label == o.label;
  }
};

enum class GraphKind { Amr, Dependency };

// Directed multigraph with string labels and a designated root. Augmentation
// adds reverse/self/global edges and one global node at id n.
struct LabeledGraph {
  std::vector<NodeRecord> nodes;
  std::vector<EdgeRecord> edges;
  int root = 0;
  bool augmented = false;
  GraphKind kind = GraphKind::Amr;

  int n() const { return int(nodes.size()); }
  int m() const { return int(edges.size()); }

  int add_node(const std::string& label) {
    nodes.emplace_back(int(nodes.size()), label);
    return int(nodes.size()) - 1;
  }

  void add_edge(int src, int dst, const std::string& label) {
    edges.push_back({src, dst, label});
  }

  // id of the global node; only valid on augmented graphs
  int global_node() const { return n() - 1; }

  std::vector<std::vector<int>> out_adj() const {
    std::vector<std::vector<int>> adj(nodes.size());
    for (int e = 0; e < m(); ++e) adj[size_t(edges[size_t(e)].src)].push_back(e);
    return adj;
  }
};

inline void validate(const LabeledGraph& g) {
  int n = g.n();
  if (n == 0) throw DataError("graph has no nodes");
  if (g.root < 0 || g.root >= n) throw DataError("root id out of range");
  std::unordered_set<std::string> seen;
  for (const auto& nd : g.nodes)
    if (nd.label.empty()) throw DataError("node " + std::to_string(nd.id) + " has empty label");
  for (const auto& e : g.edges) {
    if (e.src < 0 || e.src >= n || e.dst < 0 || e.dst >= n)
      throw DataError("edge endpoint out of range");
    if (e.label.empty()) throw DataError("edge with empty label");
    std::string key = std::to_string(e.src) + "\x1f" + std::to_string(e.dst) + "\x1f" + e.label;
    if (!seen.insert(key).second)
      throw DataError("duplicate edge (" + std::to_string(e.src) + "," + std::to_string(e.dst) +
                      "," + e.label + ")");
  }
  if (!g.augmented) {
    for (const auto& e : g.edges) {
      if (e.src == e.dst) throw DataError("self-loop in unaugmented graph");
      if (is_reverse_label(e.label) || e.label == kSelfLabel || e.label == kGlobalLabel)
        throw DataError("reserved edge label '" + e.label + "' in unaugmented graph");
    }
    // every node reachable from root ignoring direction
    std::vector<std::vector<int>> und(static_cast<size_t>(n));
    for (const auto& e : g.edges) {
      und[size_t(e.src)].push_back(e.dst);
      und[size_t(e.dst)].push_back(e.src);
    }
    std::vector<char> vis(size_t(n), 0);
    std::deque<int> q{g.root};
    vis[size_t(g.root)] = 1;
    int count = 1;
    while (!q.empty()) {
      int u = q.front();
      q.pop_front();
      for (int v : und[size_t(u)])
        if (!vis[size_t(v)]) {
          vis[size_t(v)] = 1;
          ++count;
          q.push_back(v);
        }
    }
    if (count != n) throw DataError("graph is not connected from root (undirected view)");
  }
}

// Adds, in order: reverse edges, self loops (incl. the new global node), and
// global->node edges. Original edges and node ids are preserved, the global
// node gets id n. Rejects already-augmented input.
inline LabeledGraph augment(const LabeledGraph& g) {
  if (g.augmented) throw DataError("augment: graph is already augmented");
  validate(g);
  LabeledGraph out = g;
  int n = g.n();
  for (const auto& e : g.edges) out.add_edge(e.dst, e.src, kReversePrefix + e.label);
  int global = out.add_node(kGlobalNodeLabel);
  for (int i = 0; i <= n; ++i) out.add_edge(i, i, kSelfLabel);
  for (int i = 0; i < n; ++i) out.add_edge(global, i, kGlobalLabel);
  out.augmented = true;
  return out;
}

// Drops reverse/self/global edges and the global node; exact inverse of augment.
inline LabeledGraph strip_augmentation(const LabeledGraph& g) {
  if (!g.augmented) throw DataError("strip_augmentation: graph is not augmented");
  LabeledGraph out;
  out.root = g.root;
  out.kind = g.kind;
  out.nodes.assign(g.nodes.begin(), g.nodes.end() - 1);
  for (const auto& e : g.edges)
    if (e.src != e.dst && !is_reverse_label(e.label) && e.label != kGlobalLabel)
      out.edges.push_back(e);
  return out;
}

namespace detail {

// multi-source BFS over a subset of edges; -1 marks unreachable
inline std::vector<int> bfs_dist(int n, const std::vector<std::pair<int, int>>& arcs, int start) {
  std::vector<std::vector<int>> adj(static_cast<size_t>(n));
  for (auto [u, v] : arcs) adj[size_t(u)].push_back(v);
  std::vector<int> dist(size_t(n), -1);
  std::deque<int> q{start};
  dist[size_t(start)] = 0;
  while (!q.empty()) {
    int u = q.front();
    q.pop_front();
    for (int v : adj[size_t(u)])
      if (dist[size_t(v)] < 0) {
        dist[size_t(v)] = dist[size_t(u)] + 1;
        q.push_back(v);
      }
  }
  return dist;
}

}  // namespace detail

// Structural index of each node, including the global node (always 0).
// AMR graphs: hop count from the root along original edges, falling back to
// the undirected hop count for nodes the root cannot reach directionally.
// Dependency graphs: surface token order.
inline std::vector<int> absolute_positions(const LabeledGraph& g) {
  if (!g.augmented) throw DataError("absolute_positions: expects an augmented graph");
  int total = g.n();
  int n = total - 1;
  std::vector<int> pos(size_t(total), 0);
  if (g.kind == GraphKind::Dependency) {
    for (int i = 0; i < n; ++i) pos[size_t(i)] = i;
    pos[size_t(n)] = 0;
    return pos;
  }
  std::vector<std::pair<int, int>> fwd, und;
  for (const auto& e : g.edges) {
    if (e.src == e.dst || is_reverse_label(e.label) || e.label == kGlobalLabel) continue;
    fwd.emplace_back(e.src, e.dst);
    und.emplace_back(e.src, e.dst);
    und.emplace_back(e.dst, e.src);
  }
  auto dd = detail::bfs_dist(total, fwd, g.root);
  auto du = detail::bfs_dist(total, und, g.root);
  for (int i = 0; i < n; ++i) pos[size_t(i)] = dd[size_t(i)] >= 0 ? dd[size_t(i)] : du[size_t(i)];
  pos[size_t(n)] = 0;
  return pos;
}

struct GraphStats {
  int size = 0;
  int diameter = 0;
  int reentrancies = 0;
  bool disconnected = false;  // diameter taken over the largest component
};

inline GraphStats graph_stats(const LabeledGraph& g) {
  if (g.augmented) throw DataError("graph_stats: expects an unaugmented graph");
  GraphStats st;
  st.size = g.n();
  std::vector<int> indeg(size_t(g.n()), 0);
  std::vector<std::pair<int, int>> und;
  for (const auto& e : g.edges) {
    indeg[size_t(e.dst)]++;
    und.emplace_back(e.src, e.dst);
    und.emplace_back(e.dst, e.src);
  }
  for (int d : indeg)
    if (d >= 2) st.reentrancies++;
  int best = 0;
  for (int s = 0; s < g.n(); ++s) {
    auto dist = detail::bfs_dist(g.n(), und, s);
    for (int d : dist) {
      if (d < 0)
        st.disconnected = true;
      else
        best = std::max(best, d);
    }
  }
  st.diameter = best;
  return st;
}

}  // namespace g2s

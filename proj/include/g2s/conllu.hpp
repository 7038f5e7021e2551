#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "g2s/graph.hpp"

namespace g2s {

// Reads one CoNLL-U sentence block into a dependency graph: one node per
// token labeled with FORM, one edge head -> dependent labeled DEPREL, root =
// the single token with HEAD 0. Accepts full 10-column lines (tab separated)
// or a compact ID FORM HEAD DEPREL layout; comment lines, multiword ranges
// (1-2) and empty nodes (1.1) are skipped.
inline LabeledGraph parse_conllu(const std::string& text) {
  struct Row {
    std::string form, deprel;
    int head;
  };
  std::vector<Row> rows;
  std::istringstream in(text);
  std::string line;
  size_t lineno = 0;
  auto parse_int = [&](const std::string& s, const char* what) {
    try {
      size_t used = 0;
      int v = std::stoi(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ParseError("line " + std::to_string(lineno) + ": bad " + what + " field '" + s + "'");
    }
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    if (line.find('\t') != std::string::npos) {
      std::istringstream ls(line);
      std::string c;
      while (std::getline(ls, c, '\t')) cols.push_back(c);
    } else {
      std::istringstream ls(line);
      std::string c;
      while (ls >> c) cols.push_back(c);
    }
    if (cols.empty()) continue;
    const std::string& id = cols[0];
    if (id.find('-') != std::string::npos || id.find('.') != std::string::npos) continue;
    std::string form, head, deprel;
    if (cols.size() >= 10) {
      form = cols[1];
      head = cols[6];
      deprel = cols[7];
    } else if (cols.size() >= 4) {
      form = cols[1];
      head = cols[2];
      deprel = cols[3];
    } else {
      throw ParseError("line " + std::to_string(lineno) + ": expected 4 or 10 columns, got " +
                       std::to_string(cols.size()));
    }
    if (parse_int(id, "ID") != int(rows.size()) + 1)
      throw ParseError("line " + std::to_string(lineno) + ": token ids must be 1..n in order");
    if (form.empty()) throw ParseError("line " + std::to_string(lineno) + ": empty FORM");
    if (deprel.empty() || deprel == "_")
      throw ParseError("line " + std::to_string(lineno) + ": missing DEPREL");
    if (head == "_") throw ParseError("line " + std::to_string(lineno) + ": missing HEAD");
    rows.push_back({form, deprel, parse_int(head, "HEAD")});
  }
  if (rows.empty()) throw ParseError("empty CoNLL-U block");

  LabeledGraph g;
  g.kind = GraphKind::Dependency;
  int n = int(rows.size());
  int root = -1;
  for (int i = 0; i < n; ++i) {
    g.add_node(rows[size_t(i)].form);
    int h = rows[size_t(i)].head;
    if (h < 0 || h > n)
      throw DataError("token " + std::to_string(i + 1) + ": HEAD " + std::to_string(h) +
                      " out of range");
    if (h == 0) {
      if (root >= 0) throw DataError("multiple root tokens (HEAD=0)");
      root = i;
    }
  }
  if (root < 0) throw DataError("no root token (HEAD=0)");
  g.root = root;
  for (int i = 0; i < n; ++i) {
    int h = rows[size_t(i)].head;
    if (h > 0) g.add_edge(h - 1, i, rows[size_t(i)].deprel);
  }
  // cyclic HEAD chains never reach the root
  for (int i = 0; i < n; ++i) {
    int cur = i, steps = 0;
    while (rows[size_t(cur)].head != 0) {
      cur = rows[size_t(cur)].head - 1;
      if (++steps > n) throw DataError("cyclic HEAD chain involving token " + std::to_string(i + 1));
    }
  }
  validate(g);
  return g;
}

}  // namespace g2s

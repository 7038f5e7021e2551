#pragma once

#include <cctype>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "g2s/graph.hpp"

namespace g2s {

namespace penman_detail {

struct Token {
  enum Kind { LParen, RParen, Slash, Role, Atom, Quoted, End } kind;
  std::string text;
  size_t offset;
};

inline std::vector<Token> lex(const std::string& s) {
  std::vector<Token> out;
  size_t i = 0;
  auto is_delim = [](char c) {
    return std::isspace((unsigned char)c) || c == '(' || c == ')' || c == '/' || c == ':' ||
           c == '"';
  };
  while (i < s.size()) {
    char c = s[i];
    if (std::isspace((unsigned char)c)) {
      ++i;
    } else if (c == '(') {
      out.push_back({Token::LParen, "(", i++});
    } else if (c == ')') {
      out.push_back({Token::RParen, ")", i++});
    } else if (c == '/') {
      out.push_back({Token::Slash, "/", i++});
    } else if (c == ':') {
      size_t start = i++;
      while (i < s.size() && !is_delim(s[i])) ++i;
      if (i == start + 1) throw ParseError("empty role name", start);
      out.push_back({Token::Role, s.substr(start + 1, i - start - 1), start});
    } else if (c == '"') {
      size_t start = i++;
      std::string text;
      while (i < s.size() && s[i] != '"') {
        if (s[i] == '\\' && i + 1 < s.size()) ++i;
        text += s[i++];
      }
      if (i >= s.size()) throw ParseError("unterminated string literal", start);
      ++i;
      out.push_back({Token::Quoted, text, start});
    } else {
      size_t start = i;
      while (i < s.size() && !is_delim(s[i])) ++i;
      out.push_back({Token::Atom, s.substr(start, i - start), start});
    }
  }
  out.push_back({Token::End, "", s.size()});
  return out;
}

// single letter plus optional digits: the conventional AMR variable shape
inline bool variable_like(const std::string& s) {
  if (s.empty() || !std::islower((unsigned char)s[0])) return false;
  for (size_t i = 1; i < s.size(); ++i)
    if (!std::isdigit((unsigned char)s[i])) return false;
  return true;
}

struct PNode;
struct PTarget {
  enum Kind { Nested, Ref, Constant } kind;
  std::string text;  // variable name or constant text
  size_t offset;
  std::unique_ptr<PNode> nested;
};

struct PNode {
  std::string var;
  std::string concept_name;
  size_t offset;
  std::vector<std::pair<std::string, PTarget>> relations;
};

class Parser {
 public:
  explicit Parser(const std::string& text) : toks_(lex(text)) {}

  std::unique_ptr<PNode> parse() {
    auto root = node();
    if (peek().kind != Token::End) throw ParseError("trailing input after graph", peek().offset);
    return root;
  }

 private:
  const Token& peek() const { return toks_[pos_]; }
  Token take() { return toks_[pos_++]; }

  std::unique_ptr<PNode> node() {
    if (peek().kind != Token::LParen)
      throw ParseError("expected '(' to open a node", peek().offset);
    size_t open = take().offset;
    auto n = std::make_unique<PNode>();
    n->offset = open;
    if (peek().kind != Token::Atom) throw ParseError("expected variable name", peek().offset);
    n->var = take().text;
    if (peek().kind != Token::Slash)
      throw ParseError("expected '/' after variable '" + n->var + "'", peek().offset);
    take();
    if (peek().kind != Token::Atom && peek().kind != Token::Quoted)
      throw ParseError("expected concept name", peek().offset);
    n->concept_name = take().text;
    while (peek().kind == Token::Role) {
      Token role = take();
      PTarget t;
      t.offset = peek().offset;
      switch (peek().kind) {
        case Token::LParen:
          t.kind = PTarget::Nested;
          t.nested = node();
          break;
        case Token::Atom:
          t.kind = PTarget::Ref;  // resolved against definitions later
          t.text = take().text;
          break;
        case Token::Quoted:
          t.kind = PTarget::Constant;
          t.text = take().text;
          break;
        default:
          throw ParseError("expected a target after role :" + role.text, peek().offset);
      }
      n->relations.emplace_back(role.text, std::move(t));
    }
    if (peek().kind != Token::RParen)
      throw ParseError("unbalanced parentheses: node opened here is never closed", open);
    take();
    return n;
  }

  std::vector<Token> toks_;
  size_t pos_ = 0;
};

}  // namespace penman_detail

// Parses one PENMAN s-expression into an unaugmented graph. Re-used variables
// become reentrant edges; variables may be referenced before their defining
// subtree. Bare atoms that do not look like variables are constants and get
// their own node per occurrence.
inline LabeledGraph parse_penman(const std::string& text) {
  using namespace penman_detail;
  Parser parser(text);
  auto root = parser.parse();

  // pass 1: collect variable definitions in pre-order; these become node ids
  std::map<std::string, int> var_id;
  LabeledGraph g;
  g.kind = GraphKind::Amr;
  {
    std::function<void(const PNode*)> walk = [&](const PNode* n) {
      if (var_id.count(n->var))
        throw DataError("variable '" + n->var + "' defined more than once");
      var_id[n->var] = g.add_node(n->concept_name);
      for (const auto& [role, t] : n->relations)
        if (t.kind == PTarget::Nested) walk(t.nested.get());
    };
    walk(root.get());
  }
  g.root = 0;

  // pass 2: emit edges in s-expression order
  std::function<void(const PNode*)> emit = [&](const PNode* n) {
    int src = var_id.at(n->var);
    for (const auto& [role, t] : n->relations) {
      switch (t.kind) {
        case PTarget::Nested: {
          g.add_edge(src, var_id.at(t.nested->var), role);
          emit(t.nested.get());
          break;
        }
        case PTarget::Ref: {
          auto it = var_id.find(t.text);
          if (it != var_id.end()) {
            if (it->second == src)
              throw DataError("variable '" + t.text +
                              "' used as both concept alias and self-reference");
            g.add_edge(src, it->second, role);
          } else if (variable_like(t.text)) {
            throw DataError("reference to undefined variable '" + t.text + "'");
          } else {
            g.add_edge(src, g.add_node(t.text), role);  // constant
          }
          break;
        }
        case PTarget::Constant:
          g.add_edge(src, g.add_node(t.text), role);
          break;
      }
    }
  };
  emit(root.get());
  validate(g);
  return g;
}

// Inverse of parse_penman for graphs whose every node is reachable from the
// root along directed edges; nodes re-appear as variable references.
inline std::string render_penman(const LabeledGraph& g) {
  if (g.augmented) throw DataError("render_penman: expects an unaugmented graph");
  auto adj = g.out_adj();
  std::vector<char> emitted(size_t(g.n()), 0);
  auto var = [](int id) { return "v" + std::to_string(id); };
  auto atom_safe = [](const std::string& s) {
    if (s.empty()) return false;
    for (char c : s)
      if (std::isspace((unsigned char)c) || c == '(' || c == ')' || c == '/' || c == ':' ||
          c == '"')
        return false;
    return true;
  };
  std::function<std::string(int)> emit = [&](int u) -> std::string {
    emitted[size_t(u)] = 1;
    const std::string& lab = g.nodes[size_t(u)].label;
    std::string s = "(" + var(u) + " / " + (atom_safe(lab) ? lab : "\"" + lab + "\"");
    for (int e : adj[size_t(u)]) {
      const auto& edge = g.edges[size_t(e)];
      s += " :" + edge.label + " ";
      s += emitted[size_t(edge.dst)] ? var(edge.dst) : emit(edge.dst);
    }
    return s + ")";
  };
  std::string out = emit(g.root);
  for (char e : emitted)
    if (!e) throw DataError("render_penman: some node is not reachable from the root");
  return out;
}

}  // namespace g2s

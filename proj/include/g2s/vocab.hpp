#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "g2s/errors.hpp"

namespace g2s {

class Vocab {
 public:
  int32_t add(const std::string& s) {
    auto it = index_.find(s);
    if (it != index_.end()) return it->second;
    int32_t id = int32_t(items_.size());
    items_.push_back(s);
    index_.emplace(s, id);
    return id;
  }

  // -1 when absent
  int32_t id(const std::string& s) const {
    auto it = index_.find(s);
    return it == index_.end() ? -1 : it->second;
  }

  int32_t require(const std::string& s) const {
    int32_t i = id(s);
    if (i < 0) throw VocabError("unknown symbol '" + s + "'");
    return i;
  }

  const std::string& at(int32_t i) const { return items_[size_t(i)]; }
  int32_t size() const { return int32_t(items_.size()); }
  const std::vector<std::string>& items() const { return items_; }

 private:
  std::vector<std::string> items_;
  std::unordered_map<std::string, int32_t> index_;
};

// Fixed special symbols. Token stream: pad/unk/bos/eos lead the vocabulary;
// chars: pad/unk plus one pseudo-char per special token so the token-side
// char CNN has something to read for them.
namespace special {
inline constexpr const char* kPad = "<pad>";
inline constexpr const char* kUnk = "<unk>";
inline constexpr const char* kBos = "<bos>";
inline constexpr const char* kEos = "<eos>";
inline constexpr int32_t kPadId = 0;
inline constexpr int32_t kUnkId = 1;
inline constexpr int32_t kBosId = 2;
inline constexpr int32_t kEosId = 3;
}  // namespace special

struct Vocabs {
  Vocab node_labels;  // [0] = <unk>
  Vocab edge_labels;  // closed: enumerable from training graphs + augmentation labels
  Vocab tokens;       // [0..3] = pad/unk/bos/eos
  Vocab chars;        // [0] = <pad>, [1] = <unk>, then pseudo-chars for specials

  Vocabs() {
    node_labels.add(special::kUnk);
    tokens.add(special::kPad);
    tokens.add(special::kUnk);
    tokens.add(special::kBos);
    tokens.add(special::kEos);
    chars.add(special::kPad);
    chars.add(special::kUnk);
    chars.add(special::kBos);
    chars.add(special::kEos);
  }

  int32_t node_id(const std::string& label) const {
    int32_t i = node_labels.id(label);
    return i < 0 ? 0 : i;  // unknown labels fall back to <unk>, not an error
  }

  int32_t char_id(const std::string& c) const {
    int32_t i = chars.id(c);
    return i < 0 ? 1 : i;
  }
};

}  // namespace g2s

#pragma once

#include <cctype>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "g2s/errors.hpp"
#include "g2s/unicode.hpp"

namespace g2s {

namespace metric_detail {

inline std::vector<std::string> whitespace_tokens(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (std::isspace((unsigned char)c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline std::string fold_case(const std::string& s) {
  std::string out = s;
  for (char& c : out) c = char(std::tolower((unsigned char)c));
  return out;
}

using Counts = std::map<std::string, int64_t>;

inline Counts ngram_counts(const std::vector<std::string>& toks, size_t n) {
  Counts c;
  if (toks.size() < n) return c;
  for (size_t i = 0; i + n <= toks.size(); ++i) {
    std::string key;
    for (size_t k = 0; k < n; ++k) {
      key += toks[i + k];
      key += '\x1f';
    }
    c[key]++;
  }
  return c;
}

inline int64_t clipped_matches(const Counts& hyp, const Counts& ref) {
  int64_t m = 0;
  for (const auto& [k, v] : hyp) {
    auto it = ref.find(k);
    if (it != ref.end()) m += std::min(v, it->second);
  }
  return m;
}

}  // namespace metric_detail

// Corpus BLEU-4 with brevity penalty, no smoothing: any empty n-gram
// precision yields 0. Inputs are whitespace-tokenized as given; the flag
// folds ASCII case first.
inline double bleu(const std::vector<std::string>& hypotheses,
                   const std::vector<std::string>& references, bool case_sensitive = true) {
  using namespace metric_detail;
  if (hypotheses.empty()) throw DataError("bleu: empty corpus");
  if (hypotheses.size() != references.size())
    throw DataError("bleu: hypothesis/reference count mismatch");
  constexpr size_t kMaxOrder = 4;
  int64_t match[kMaxOrder] = {0, 0, 0, 0};
  int64_t total[kMaxOrder] = {0, 0, 0, 0};
  int64_t hyp_len = 0, ref_len = 0;
  for (size_t s = 0; s < hypotheses.size(); ++s) {
    auto h = whitespace_tokens(case_sensitive ? hypotheses[s] : fold_case(hypotheses[s]));
    auto r = whitespace_tokens(case_sensitive ? references[s] : fold_case(references[s]));
    hyp_len += int64_t(h.size());
    ref_len += int64_t(r.size());
    for (size_t n = 1; n <= kMaxOrder; ++n) {
      auto hc = ngram_counts(h, n);
      auto rc = ngram_counts(r, n);
      match[n - 1] += clipped_matches(hc, rc);
      total[n - 1] += h.size() >= n ? int64_t(h.size() - n + 1) : 0;
    }
  }
  double logsum = 0;
  for (size_t n = 0; n < kMaxOrder; ++n) {
    if (match[n] == 0 || total[n] == 0) return 0.0;
    logsum += std::log(double(match[n]) / double(total[n]));
  }
  double bp = hyp_len >= ref_len ? 1.0 : std::exp(1.0 - double(ref_len) / double(hyp_len));
  return 100.0 * bp * std::exp(logsum / double(kMaxOrder));
}

namespace metric_detail {

// word tokens for chrF++: whitespace split with one leading or trailing
// punctuation mark separated per token
inline std::vector<std::string> punct_split_tokens(const std::string& s) {
  std::vector<std::string> out;
  for (const auto& w : whitespace_tokens(s)) {
    if (w.size() > 1 && std::ispunct((unsigned char)w.back())) {
      out.push_back(w.substr(0, w.size() - 1));
      out.push_back(w.substr(w.size() - 1));
    } else if (w.size() > 1 && std::ispunct((unsigned char)w.front())) {
      out.push_back(w.substr(0, 1));
      out.push_back(w.substr(1));
    } else {
      out.push_back(w);
    }
  }
  return out;
}

// code points, whitespace removed
inline std::vector<std::string> despaced_chars(const std::string& s) {
  std::vector<std::string> out;
  for (auto& c : utf8_chars(s))
    if (!(c.size() == 1 && std::isspace((unsigned char)c[0]))) out.push_back(std::move(c));
  return out;
}

struct FScoreStats {
  static constexpr size_t kCharOrders = 6;
  static constexpr size_t kWordOrders = 2;
  static constexpr size_t kOrders = kCharOrders + kWordOrders;
  int64_t match[kOrders] = {};
  int64_t hyp_total[kOrders] = {};
  int64_t ref_total[kOrders] = {};

  void add(const std::string& hyp, const std::string& ref) {
    auto hc = despaced_chars(hyp);
    auto rc = despaced_chars(ref);
    auto hw = punct_split_tokens(hyp);
    auto rw = punct_split_tokens(ref);
    for (size_t n = 1; n <= kCharOrders; ++n) accumulate(n - 1, hc, rc, n);
    for (size_t n = 1; n <= kWordOrders; ++n) accumulate(kCharOrders + n - 1, hw, rw, n);
  }

  // Popovic 2017, beta = 2: precision and recall are averaged over all
  // n-gram orders (orders with an empty side contribute 0), then combined in
  // a single F-score. Corpus scores aggregate the counts first.
  double score(double beta = 2.0) const {
    double p = 0, r = 0;
    for (size_t o = 0; o < kOrders; ++o) {
      p += hyp_total[o] > 0 ? double(match[o]) / double(hyp_total[o]) : 0.0;
      r += ref_total[o] > 0 ? double(match[o]) / double(ref_total[o]) : 0.0;
    }
    p /= double(kOrders);
    r /= double(kOrders);
    double denom = beta * beta * p + r;
    if (denom <= 0) return 0.0;
    return 100.0 * (1.0 + beta * beta) * p * r / denom;
  }

 private:
  void accumulate(size_t slot, const std::vector<std::string>& h,
                  const std::vector<std::string>& r, size_t n) {
    auto hc = ngram_counts(h, n);
    auto rc = ngram_counts(r, n);
    match[slot] += clipped_matches(hc, rc);
    hyp_total[slot] += h.size() >= n ? int64_t(h.size() - n + 1) : 0;
    ref_total[slot] += r.size() >= n ? int64_t(r.size() - n + 1) : 0;
  }
};

}  // namespace metric_detail

// chrF++: character n-grams up to 6 plus word n-grams up to 2, beta = 2.
inline double chrf_pp(const std::vector<std::string>& hypotheses,
                      const std::vector<std::string>& references) {
  if (hypotheses.empty()) throw DataError("chrf_pp: empty corpus");
  if (hypotheses.size() != references.size())
    throw DataError("chrf_pp: hypothesis/reference count mismatch");
  metric_detail::FScoreStats stats;
  for (size_t s = 0; s < hypotheses.size(); ++s) stats.add(hypotheses[s], references[s]);
  return stats.score();
}

inline double sentence_chrf_pp(const std::string& hypothesis, const std::string& reference) {
  metric_detail::FScoreStats stats;
  stats.add(hypothesis, reference);
  return stats.score();
}

}  // namespace g2s

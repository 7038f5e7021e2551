#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "g2s/paths.hpp"
#include "g2s/tensor.hpp"

namespace g2s {

struct BinnedReport {
  std::string key;              // size | diameter | reentrancies
  std::vector<double> edges;    // three inner edges -> four bins
  std::vector<int64_t> counts;  // per bin; sums to corpus size
  std::vector<double> scores;   // macro average per bin; NaN for empty bins
};

// nearest-rank percentile over a copy of the values
inline double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  size_t idx = size_t(std::ceil(q * double(v.size()))) - 1;
  idx = std::min(idx, v.size() - 1);
  return v[idx];
}

// Four bins over a per-graph statistic with macro-averaged sentence scores.
// Default edges are the statistic's quartiles.
inline BinnedReport binned_report(const std::vector<double>& per_sentence_scores,
                                  const std::vector<int>& stat_values, const std::string& key,
                                  std::vector<double> edges = {}) {
  if (per_sentence_scores.size() != stat_values.size() || per_sentence_scores.empty())
    throw DataError("binned_report: score/stat size mismatch or empty corpus");
  if (edges.empty()) {
    std::vector<double> vals(stat_values.begin(), stat_values.end());
    edges = {percentile(vals, 0.25), percentile(vals, 0.50), percentile(vals, 0.75)};
  }
  if (edges.size() != 3) throw DataError("binned_report: expected three inner bin edges");
  BinnedReport rep;
  rep.key = key;
  rep.edges = edges;
  rep.counts.assign(4, 0);
  std::vector<double> sums(4, 0.0);
  for (size_t i = 0; i < stat_values.size(); ++i) {
    double v = stat_values[i];
    size_t bin = v <= edges[0] ? 0 : v <= edges[1] ? 1 : v <= edges[2] ? 2 : 3;
    rep.counts[bin]++;
    sums[bin] += per_sentence_scores[i];
  }
  for (size_t b = 0; b < 4; ++b)
    rep.scores.push_back(rep.counts[b] ? sums[b] / double(rep.counts[b])
                                       : std::numeric_limits<double>::quiet_NaN());
  return rep;
}

// Average shortest-path distance between each query node and the key node
// holding its maximum attention weight, per (layer, head). The global node
// is excluded on both sides (its one-hop shortcut to everything would mask
// the long-distance signal), and self pairs count as distance 0.
class AttentionDistance {
 public:
  AttentionDistance(int layers, int heads) : layers_(layers), heads_(heads) {
    sum_.assign(size_t(layers) * size_t(heads), 0.0);
    count_.assign(size_t(layers) * size_t(heads), 0);
  }

  // attn: per layer, per head, [n+1, n+1] row-softmax weights
  template <typename T>
  void add_graph(const std::vector<std::vector<Tensor<T>>>& attn, const PathTable& paths) {
    int n1 = paths.n;
    int global = n1 - 1;
    for (int l = 0; l < layers_; ++l)
      for (int h = 0; h < heads_; ++h) {
        const Tensor<T>& w = attn[size_t(l)][size_t(h)];
        if (w.shape() != Shape{n1, n1})
          throw ShapeError("attention_distance: weight matrix " + shape_str(w.shape()) +
                           " does not match path table n=" + std::to_string(n1));
        for (int i = 0; i < global; ++i) {
          int best = -1;
          T best_w = -std::numeric_limits<T>::infinity();
          for (int j = 0; j < global; ++j) {  // ties: lowest node id wins
            T wij = w[int64_t(i) * n1 + j];
            if (wij > best_w) {
              best_w = wij;
              best = j;
            }
          }
          double dist = best == i ? 0.0 : double(paths.at(i, best)[0].size());
          sum_[size_t(l) * size_t(heads_) + size_t(h)] += dist;
          count_[size_t(l) * size_t(heads_) + size_t(h)]++;
        }
      }
  }

  // [layers x heads] averages; NaN when a slot saw no queries
  std::vector<std::vector<double>> averages() const {
    std::vector<std::vector<double>> out(static_cast<size_t>(layers_),
                                         std::vector<double>(static_cast<size_t>(heads_)));
    for (int l = 0; l < layers_; ++l)
      for (int h = 0; h < heads_; ++h) {
        size_t k = size_t(l) * size_t(heads_) + size_t(h);
        out[size_t(l)][size_t(h)] =
            count_[k] ? sum_[k] / double(count_[k]) : std::numeric_limits<double>::quiet_NaN();
      }
    return out;
  }

 private:
  int layers_, heads_;
  std::vector<double> sum_;
  std::vector<int64_t> count_;
};

}  // namespace g2s

#pragma once

#include <cmath>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "g2s/config.hpp"
#include "g2s/metrics.hpp"
#include "g2s/model.hpp"

namespace g2s {

// rate = d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)
inline double lr_schedule(int64_t step, int64_t d_model, int64_t warmup) {
  if (step < 1) throw ConfigError("lr_schedule: step must be >= 1");
  if (warmup < 1) throw ConfigError("lr_schedule: warmup must be >= 1");
  double s = double(step), w = double(warmup);
  return std::pow(double(d_model), -0.5) * std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

// Each node label is independently replaced by the UNK id; char sequences
// stay intact so the char CNN still sees the surface form.
inline void unk_replace(GraphInput& in, double rate, Rng& rng) {
  if (rate <= 0) return;
  for (auto& id : in.label_ids)
    if (rng.bernoulli(rate)) id = 0;  // node-label UNK
}

template <typename T>
class Adam {
 public:
  Adam() = default;
  explicit Adam(const ParamStore<T>& ps, T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
      : beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& [name, v] : ps.items()) {
      m_.emplace_back(v.shape());
      v_.emplace_back(v.shape());
    }
  }

  int64_t step_count() const { return step_; }

  void apply(ParamStore<T>& ps, T lr) {
    ++step_;
    T c1 = T(1) - std::pow(beta1_, T(step_));
    T c2 = T(1) - std::pow(beta2_, T(step_));
    for (size_t i = 0; i < ps.items().size(); ++i) {
      Variable<T> p = ps.items()[i].second;
      Tensor<T>& m = m_[i];
      Tensor<T>& v = v_[i];
      const bool has_grad = p.has_grad();
      const T* g = has_grad ? p.grad().data() : nullptr;
      T* pm = m.data();
      T* pv = v.data();
      T* pd = p.value().data();
      for (int64_t k = 0, n = p.numel(); k < n; ++k) {
        T gk = has_grad ? g[k] : T(0);
        pm[k] = beta1_ * pm[k] + (T(1) - beta1_) * gk;
        pv[k] = beta2_ * pv[k] + (T(1) - beta2_) * gk * gk;
        pd[k] -= lr * (pm[k] / c1) / (std::sqrt(pv[k] / c2) + eps_);
      }
    }
  }

  std::vector<std::pair<std::string, Tensor<T>>> snapshot(const ParamStore<T>& ps) const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    for (size_t i = 0; i < ps.items().size(); ++i) {
      out.emplace_back("adam/m/" + ps.items()[i].first, m_[i]);
      out.emplace_back("adam/v/" + ps.items()[i].first, v_[i]);
    }
    out.emplace_back("meta/adam_step", Tensor<T>::scalar(T(step_)));
    return out;
  }

  void restore(const ParamStore<T>& ps,
               const std::vector<std::pair<std::string, Tensor<T>>>& items) {
    for (const auto& [name, t] : items) {
      if (name == "meta/adam_step") {
        step_ = int64_t(t[0]);
        continue;
      }
      bool is_m = name.rfind("adam/m/", 0) == 0;
      bool is_v = name.rfind("adam/v/", 0) == 0;
      if (!is_m && !is_v) continue;
      std::string pname = name.substr(7);
      for (size_t i = 0; i < ps.items().size(); ++i)
        if (ps.items()[i].first == pname) {
          (is_m ? m_[i] : v_[i]) = t;
          break;
        }
    }
  }

 private:
  T beta1_ = T(0.9), beta2_ = T(0.999), eps_ = T(1e-8);
  int64_t step_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

struct TrainSettings {
  uint64_t seed = 1;
  int64_t batch_size = 4;
  int64_t max_steps = 1000;
  int64_t warmup = 400;
  int64_t eval_every = 100;
  int64_t beam = 8;
  int64_t max_decode_len = 64;
  double unk_rate = 0.33;
  double target_accuracy = 0.0;  // early stop when teacher-forced accuracy reaches this; 0 = off
  bool case_sensitive_bleu = false;

  static TrainSettings from_config(const KVConfig& cfg) {
    TrainSettings s;
    s.seed = cfg.get_u64("seed", s.seed);
    s.batch_size = cfg.get_int("batch_size", s.batch_size);
    s.max_steps = cfg.get_int("max_steps", s.max_steps);
    s.warmup = cfg.get_int("warmup", s.warmup);
    s.eval_every = cfg.get_int("eval_every", s.eval_every);
    s.beam = cfg.get_int("beam", s.beam);
    s.max_decode_len = cfg.get_int("max_decode_len", s.max_decode_len);
    s.unk_rate = cfg.get_double("unk_rate", s.unk_rate);
    s.target_accuracy = cfg.get_double("target_accuracy", s.target_accuracy);
    s.case_sensitive_bleu = cfg.get_int("case_sensitive_bleu", 0) != 0;
    return s;
  }
};

inline ModelConfig model_config_from(const KVConfig& cfg) {
  ModelConfig m;
  m.d_model = cfg.get_int("d_model", m.d_model);
  m.heads = cfg.get_int("heads", m.heads);
  m.d_ff = cfg.get_int("d_ff", m.d_ff);
  m.layers = cfg.get_int("layers", m.layers);
  m.node_emb_dim = cfg.get_int("node_emb_dim", m.node_emb_dim);
  m.token_emb_dim = cfg.get_int("token_emb_dim", m.token_emb_dim);
  m.edge_emb_dim = cfg.get_int("edge_emb_dim", m.edge_emb_dim);
  m.char_emb_dim = cfg.get_int("char_emb_dim", m.char_emb_dim);
  m.char_filters = cfg.get_int("char_filters", m.char_filters);
  m.char_width = cfg.get_int("char_width", m.char_width);
  m.char_out_dim = cfg.get_int("char_out_dim", m.char_out_dim);
  m.rel_hidden = cfg.get_int("rel_hidden", m.rel_hidden);
  m.max_positions = cfg.get_int("max_positions", m.max_positions);
  m.dropout = cfg.get_double("dropout", m.dropout);
  m.check();
  return m;
}

// one optimization step over a batch of examples (teacher forcing)
template <typename T>
struct StepOutcome {
  T loss = T(0);
  double grad_norm = 0;
  int64_t tokens = 0;
  int64_t clamped = 0;  // gold probabilities that hit the 1e-12 floor
  bool finite = true;
};

template <typename T>
StepOutcome<T> train_step(GraphTransformer<T>& model, Adam<T>& opt,
                          const std::vector<Example>& corpus, const std::vector<size_t>& batch,
                          int64_t step, const TrainSettings& ts) {
  StepOutcome<T> out;
  Tape<T> tape;
  TapeScope<T> scope(tape);
  FwdCtx<T> ctx = model.make_ctx(true, sub_seed(ts.seed, "dropout", uint64_t(step)));

  std::vector<PathSelection> sels;
  std::vector<std::pair<const PathTable*, const PathSelection*>> keyed;
  for (size_t bi = 0; bi < batch.size(); ++bi) {
    const Example& ex = corpus[batch[bi]];
    sels.push_back(select_paths(ex.paths, PathMode::Train,
                                sub_seed(ts.seed, "paths", uint64_t(step), uint64_t(batch[bi]))));
  }
  for (size_t bi = 0; bi < batch.size(); ++bi)
    keyed.emplace_back(&corpus[batch[bi]].paths, &sels[bi]);
  DedupResult dedup = dedup_paths(keyed);
  Variable<T> unique = model.encode_unique_paths(dedup);

  Rng unk_rng(sub_seed(ts.seed, "unk", uint64_t(step)));
  std::vector<Variable<T>> gold_probs;
  for (size_t bi = 0; bi < batch.size(); ++bi) {
    const Example& ex = corpus[batch[bi]];
    GraphInput in = model.make_input(ex);
    unk_replace(in, ts.unk_rate, unk_rng);
    auto rel = model.relation_tables(unique, dedup.graphs[bi], ex.graph.n());
    auto enc = model.encode(in, rel, ctx);
    auto cands = model.make_candidates(ex);
    auto tb = model.prepare_target(ex, cands);
    auto fwd = model.forward_teacher(ex, enc, cands, tb, ctx);
    gold_probs.push_back(fwd.gold_probs);
    out.tokens += int64_t(tb.gold_vocab_ids.size());
  }
  Variable<T> all_p = concat(gold_probs, 0);
  for (int64_t i = 0; i < all_p.numel(); ++i)
    if (all_p.value()[i] <= T(1e-12)) out.clamped++;
  Variable<T> loss = neg(mean_all(log_op(clamp_min(all_p, T(1e-12)))));
  out.loss = loss.value().item();
  if (!std::isfinite(double(out.loss))) {
    out.finite = false;
    return out;
  }
  model.params().zero_grad();
  tape.backward(loss);
  out.grad_norm = model.params().grad_norm();
  if (!std::isfinite(out.grad_norm)) {
    out.finite = false;
    return out;
  }
  opt.apply(model.params(), T(lr_schedule(step, model.config().d_model, ts.warmup)));
  return out;
}

// teacher-forced token accuracy under eval conditions (no dropout, averaged
// paths, no UNK replacement); argmax over the extended mixture distribution
template <typename T>
double token_accuracy(const GraphTransformer<T>& model, const std::vector<Example>& corpus) {
  int64_t hits = 0, total = 0;
  FwdCtx<T> ctx = model.make_ctx(false, 0);
  for (const auto& ex : corpus) {
    auto enc = model.encode_example(ex, ctx);
    auto cands = model.make_candidates(ex);
    auto tb = model.prepare_target(ex, cands);
    auto fwd = model.forward_teacher(ex, enc, cands, tb, ctx);
    int64_t steps = int64_t(tb.gold_ext.size());
    int64_t vt = model.vocabs().tokens.size();
    int n = ex.graph.n() - 1;
    for (int64_t t = 0; t < steps; ++t) {
      Tensor<T> gen_row({vt});
      for (int64_t v = 0; v < vt; ++v) gen_row[v] = fwd.copy.gen.value()[t * vt + v];
      Tensor<T> gate_row({2});
      gate_row[0] = fwd.copy.gate.value()[t * 2];
      gate_row[1] = fwd.copy.gate.value()[t * 2 + 1];
      Tensor<T> attn_row({int64_t(n)});
      for (int64_t i = 0; i < n; ++i) attn_row[i] = fwd.copy.attn.value()[t * n + i];
      Tensor<T> ext = model.extended_distribution(gen_row, gate_row, attn_row, cands);
      int32_t best = 0;
      for (int64_t y = 1; y < ext.numel(); ++y)
        if (ext[y] > ext[best]) best = int32_t(y);
      hits += best == tb.gold_ext[size_t(t)];
      ++total;
    }
  }
  return total ? double(hits) / double(total) : 0.0;
}

template <typename T>
double dev_bleu(const GraphTransformer<T>& model, const std::vector<Example>& dev,
                const TrainSettings& ts) {
  std::vector<std::string> hyps, refs;
  for (const auto& ex : dev) {
    auto gen = model.beam_search(ex, int(ts.beam), int(ts.max_decode_len));
    std::string h;
    for (size_t i = 0; i < gen.tokens.size(); ++i) h += (i ? " " : "") + gen.tokens[i];
    std::string r;
    for (size_t i = 0; i < ex.tokens.size(); ++i) r += (i ? " " : "") + ex.tokens[i];
    hyps.push_back(h);
    refs.push_back(r);
  }
  return bleu(hyps, refs, ts.case_sensitive_bleu);
}

struct TrainResult {
  int64_t steps_done = 0;
  double best_dev_bleu = -1;
  double final_accuracy = -1;
  bool aborted_nonfinite = false;
  std::string best_ckpt, last_ckpt;
};

template <typename T>
void save_train_state(const std::string& path, const GraphTransformer<T>& model,
                      const Adam<T>& opt, int64_t step, double best_bleu) {
  auto items = model.snapshot();
  auto extra = opt.snapshot(model.params());
  items.insert(items.end(), extra.begin(), extra.end());
  items.emplace_back("meta/step", Tensor<T>::scalar(T(step)));
  items.emplace_back("meta/best_dev_bleu", Tensor<T>::scalar(T(best_bleu)));
  save_tensors(path, items);
}

template <typename T>
int64_t load_train_state(const std::string& path, GraphTransformer<T>& model, Adam<T>& opt,
                         double* best_bleu = nullptr) {
  auto items = load_tensors<T>(path);
  model.restore(items);
  opt.restore(model.params(), items);
  int64_t step = 0;
  for (const auto& [name, t] : items) {
    if (name == "meta/step") step = int64_t(t[0]);
    if (name == "meta/best_dev_bleu" && best_bleu) *best_bleu = double(t[0]);
  }
  return step;
}

// Seeded, resumable loop. Every random draw is keyed by (seed, step), so a
// resumed run replays the interrupted trajectory exactly. Saves `last.ckpt`
// every eval and `best.ckpt` by dev BLEU; aborts (keeping the last good
// checkpoint) if the loss turns non-finite.
template <typename T>
TrainResult train_loop(GraphTransformer<T>& model, Adam<T>& opt,
                       const std::vector<Example>& train_set,
                       const std::vector<Example>& dev_set, const TrainSettings& ts,
                       const std::string& out_dir, int64_t start_step = 0,
                       double start_best = -1, std::ostream* log = nullptr) {
  TrainResult res;
  res.best_dev_bleu = start_best;
  res.best_ckpt = out_dir + "/best.ckpt";
  res.last_ckpt = out_dir + "/last.ckpt";
  auto batches = make_batches(train_set, size_t(ts.batch_size));
  std::ofstream csv(out_dir + "/metrics.csv", start_step > 0 ? std::ios::app : std::ios::trunc);
  if (!csv) throw DataError("cannot write metrics.csv under " + out_dir);
  if (start_step == 0) csv << "step,loss,lr,grad_norm,dev_bleu\n";

  std::vector<size_t> order;
  uint64_t order_epoch = ~uint64_t(0);
  for (int64_t step = start_step + 1; step <= ts.max_steps; ++step) {
    uint64_t epoch = uint64_t((step - 1) / int64_t(batches.size()));
    if (epoch != order_epoch) {
      order = epoch_batch_order(batches.size(), ts.seed, epoch);
      order_epoch = epoch;
    }
    const auto& batch = batches[order[size_t((step - 1) % int64_t(batches.size()))]];
    auto outcome = train_step(model, opt, train_set, batch, step, ts);
    if (!outcome.finite) {
      res.aborted_nonfinite = true;
      res.steps_done = step - 1;
      if (log) *log << "step " << step << ": non-finite loss, aborting\n";
      return res;
    }
    double lr = lr_schedule(step, model.config().d_model, ts.warmup);
    csv << step << "," << outcome.loss << "," << lr << "," << outcome.grad_norm << ",";
    bool evaluated = ts.eval_every > 0 && (step % ts.eval_every == 0 || step == ts.max_steps);
    bool stop_early = false;
    if (evaluated) {
      double acc = ts.target_accuracy > 0 ? token_accuracy(model, train_set) : -1;
      res.final_accuracy = acc;
      if (!dev_set.empty()) {
        double db = dev_bleu(model, dev_set, ts);
        csv << db;
        if (db > res.best_dev_bleu) {
          res.best_dev_bleu = db;
          save_train_state(res.best_ckpt, model, opt, step, res.best_dev_bleu);
        }
        if (log) *log << "step " << step << " loss " << outcome.loss << " dev_bleu " << db
                      << (acc >= 0 ? " acc " + std::to_string(acc) : "") << "\n";
      } else if (log) {
        *log << "step " << step << " loss " << outcome.loss
             << (acc >= 0 ? " acc " + std::to_string(acc) : "") << "\n";
      }
      save_train_state(res.last_ckpt, model, opt, step, res.best_dev_bleu);
      if (ts.target_accuracy > 0 && acc >= ts.target_accuracy) stop_early = true;
    }
    csv << "\n";
    res.steps_done = step;
    if (stop_early) break;
  }
  save_train_state(res.last_ckpt, model, opt, res.steps_done, res.best_dev_bleu);
  if (dev_set.empty()) save_train_state(res.best_ckpt, model, opt, res.steps_done, -1);
  return res;
}

}  // namespace g2s

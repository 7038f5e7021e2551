// graph-to-sequence transducer: preprocess -> train -> generate -> evaluate
// -> analyze, all driven by one flat key=value config.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "g2s/analysis.hpp"
#include "g2s/data.hpp"
#include "g2s/manifest.hpp"
#include "g2s/metrics.hpp"
#include "g2s/model.hpp"
#include "g2s/train.hpp"
#include "g2s/version.hpp"

namespace fs = std::filesystem;
using namespace g2s;

namespace {

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  while (!out.empty() && out.back().empty()) out.pop_back();
  return out;
}

struct PreprocessArgs {
  std::string format = "penman";
  std::string in, out;
  int max_path_len = 8;
  int path_cap = 4;
  bool skip_bad = false;
  int threads = 1;
};

int cmd_preprocess(const PreprocessArgs& a) {
  CorpusFormat fmt = a.format == "penman" ? CorpusFormat::Penman : CorpusFormat::Conllu;
  auto blocks = read_blocks_file(a.in, fmt);
  if (blocks.empty()) throw DataError(a.in + ": no graph blocks found");
  std::vector<Example> examples(blocks.size());
  std::vector<std::string> failures(blocks.size());
  auto work = [&](size_t begin, size_t end) {
    for (size_t i = begin; i < end; ++i) {
      try {
        LabeledGraph g = fmt == CorpusFormat::Penman ? parse_penman(blocks[i].body)
                                                     : parse_conllu(blocks[i].body);
        examples[i] = preprocess_graph(g, blocks[i].tokens, a.path_cap, a.max_path_len);
      } catch (const Error& e) {
        failures[i] = "line " + std::to_string(blocks[i].first_line) + ": " + e.what();
      }
    }
  };
  int threads = std::max(1, a.threads);
  if (threads == 1 || blocks.size() < 2) {
    work(0, blocks.size());
  } else {
    std::vector<std::thread> pool;
    size_t chunk = (blocks.size() + size_t(threads) - 1) / size_t(threads);
    for (int t = 0; t < threads; ++t) {
      size_t b = size_t(t) * chunk;
      if (b >= blocks.size()) break;
      pool.emplace_back(work, b, std::min(blocks.size(), b + chunk));
    }
    for (auto& th : pool) th.join();
  }
  std::vector<Example> good;
  size_t bad = 0;
  for (size_t i = 0; i < blocks.size(); ++i) {
    if (!failures[i].empty()) {
      ++bad;
      std::cerr << a.in << ": " << failures[i] << "\n";
      if (!a.skip_bad) throw DataError("preprocessing failed (use --skip-bad to continue)");
      continue;
    }
    good.push_back(std::move(examples[i]));
  }
  if (good.empty()) throw DataError("no graphs survived preprocessing");
  write_examples_jsonl(a.out, good);

  double nodes = 0, edges = 0, diam = 0;
  for (const auto& ex : good) {
    nodes += ex.stats.size;
    edges += double(strip_augmentation(ex.graph).m());
    diam += ex.stats.diameter;
  }
  size_t n = good.size();
  std::cout << "graphs: " << n << " (skipped " << bad << ")\n"
            << "avg nodes: " << nodes / double(n) << "\n"
            << "avg edges: " << edges / double(n) << "\n"
            << "avg diameter: " << diam / double(n) << "\n";

  RunManifest m;
  m.command = "preprocess";
  m.args = {{"format", a.format},
            {"in", a.in},
            {"out", a.out},
            {"max_path_len", std::to_string(a.max_path_len)},
            {"path_cap", std::to_string(a.path_cap)},
            {"skip_bad", a.skip_bad ? "1" : "0"}};
  m.inputs = {a.in};
  m.outputs = {a.out};
  m.write(a.out + ".manifest.json");
  return 0;
}

struct TrainArgs {
  std::string config, data, dev, out_dir;
  std::vector<std::string> overrides;
  int64_t seed = -1;  // overrides the config key when >= 0
  bool resume = false;
};

KVConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides) {
  KVConfig cfg = path.empty() ? KVConfig() : KVConfig::load(path);
  for (const auto& kv : overrides) {
    size_t eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got " + kv);
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

template <typename T>
int run_train(const TrainArgs& a, const KVConfig& cfg) {
  auto train_set = read_examples_jsonl(a.data);
  std::vector<Example> dev_set;
  if (!a.dev.empty()) dev_set = read_examples_jsonl(a.dev);
  fs::create_directories(a.out_dir);

  ModelConfig mc = model_config_from(cfg);
  TrainSettings ts = TrainSettings::from_config(cfg);
  Vocabs vocabs;
  std::string vocab_path = a.out_dir + "/vocab.json";
  if (a.resume && fs::exists(vocab_path)) {
    std::ifstream vin(vocab_path);
    vocabs = vocabs_from_json(json::parse(vin));
  } else {
    vocabs = build_vocabs(train_set);
    std::ofstream vout(vocab_path);
    vout << vocabs_to_json(vocabs).dump(2) << "\n";
  }
  {
    std::ofstream rcfg(a.out_dir + "/config.resolved.cfg");
    rcfg << cfg.dump();
  }

  GraphTransformer<T> model(mc, vocabs, sub_seed(ts.seed, "init"));
  Adam<T> opt(model.params());
  int64_t start_step = 0;
  double best = -1;
  if (a.resume) {
    std::string last = a.out_dir + "/last.ckpt";
    if (!fs::exists(last)) throw DataError("--resume: " + last + " not found");
    start_step = load_train_state(last, model, opt, &best);
    std::cerr << "resuming from step " << start_step << "\n";
  }
  std::cerr << "parameters: " << model.params().total_params() << "\n";
  auto res = train_loop(model, opt, train_set, dev_set, ts, a.out_dir, start_step, best,
                        &std::cerr);
  if (res.aborted_nonfinite) {
    std::cerr << "aborted on non-finite loss after step " << res.steps_done
              << "; last good checkpoint kept\n";
    return 3;
  }
  std::cout << "steps: " << res.steps_done << "\n";
  if (res.best_dev_bleu >= 0) std::cout << "best dev bleu: " << res.best_dev_bleu << "\n";
  if (res.final_accuracy >= 0) std::cout << "final token accuracy: " << res.final_accuracy << "\n";

  RunManifest m;
  m.command = "train";
  m.args = {{"data", a.data}, {"dev", a.dev}, {"out_dir", a.out_dir}};
  m.config_digest = cfg.digest();
  m.seed = ts.seed;
  m.inputs = {a.data};
  if (!a.dev.empty()) m.inputs.push_back(a.dev);
  m.outputs = {a.out_dir + "/last.ckpt", a.out_dir + "/best.ckpt", a.out_dir + "/metrics.csv",
               vocab_path};
  m.write(a.out_dir + "/manifest.json");
  return 0;
}

// model sidecar files live next to the checkpoint
struct LoadedModel {
  KVConfig cfg;
  Vocabs vocabs;
};

LoadedModel sidecars_for(const std::string& ckpt) {
  fs::path dir = fs::path(ckpt).parent_path();
  std::string cpath = (dir / "config.resolved.cfg").string();
  std::string vpath = (dir / "vocab.json").string();
  if (!fs::exists(cpath) || !fs::exists(vpath))
    throw DataError("expected config.resolved.cfg and vocab.json next to " + ckpt);
  LoadedModel lm{KVConfig::load(cpath), {}};
  std::ifstream vin(vpath);
  lm.vocabs = vocabs_from_json(json::parse(vin));
  return lm;
}

struct GenerateArgs {
  std::string ckpt, in, out;
  int beam = 8;
  int max_len = 64;
  int threads = 1;
};

template <typename T>
int run_generate(const GenerateArgs& a, const LoadedModel& lm) {
  auto examples = read_examples_jsonl(a.in);
  GraphTransformer<T> model(model_config_from(lm.cfg), lm.vocabs, 0);
  model.restore(load_tensors<T>(a.ckpt));
  std::vector<std::string> lines(examples.size());
  auto work = [&](size_t begin, size_t end) {
    for (size_t i = begin; i < end; ++i) {
      auto gen = model.beam_search(examples[i], a.beam, a.max_len);
      std::string s;
      for (size_t k = 0; k < gen.tokens.size(); ++k) s += (k ? " " : "") + gen.tokens[k];
      lines[i] = s;
    }
  };
  int threads = std::max(1, a.threads);
  if (threads == 1 || examples.size() < 2) {
    work(0, examples.size());
  } else {
    std::vector<std::thread> pool;
    size_t chunk = (examples.size() + size_t(threads) - 1) / size_t(threads);
    for (int t = 0; t < threads; ++t) {
      size_t b = size_t(t) * chunk;
      if (b >= examples.size()) break;
      pool.emplace_back(work, b, std::min(examples.size(), b + chunk));
    }
    for (auto& th : pool) th.join();
  }
  std::ofstream out(a.out);
  if (!out) throw DataError("cannot write " + a.out);
  for (const auto& l : lines) out << l << "\n";

  RunManifest m;
  m.command = "generate";
  m.args = {{"ckpt", a.ckpt},
            {"in", a.in},
            {"out", a.out},
            {"beam", std::to_string(a.beam)},
            {"max_len", std::to_string(a.max_len)}};
  m.config_digest = lm.cfg.digest();
  m.inputs = {a.ckpt, a.in};
  m.outputs = {a.out};
  m.write(a.out + ".manifest.json");
  return 0;
}

struct EvaluateArgs {
  std::string hyp, ref, metric = "bleu", case_mode = "sensitive", out;
};

int cmd_evaluate(const EvaluateArgs& a) {
  auto hyps = read_lines(a.hyp);
  auto refs = read_lines(a.ref);
  if (hyps.size() != refs.size())
    throw DataError("hypothesis count " + std::to_string(hyps.size()) + " != reference count " +
                    std::to_string(refs.size()));
  double score = 0;
  if (a.metric == "bleu")
    score = bleu(hyps, refs, a.case_mode == "sensitive");
  else if (a.metric == "chrfpp")
    score = chrf_pp(hyps, refs);
  else
    throw UsageError("unknown metric " + a.metric);
  std::cout.setf(std::ios::fixed);
  std::cout.precision(4);
  std::cout << score << "\n";
  if (!a.out.empty()) {
    std::ofstream out(a.out);
    out << json{{"metric", a.metric}, {"case", a.case_mode}, {"score", score}}.dump(2) << "\n";
    RunManifest m;
    m.command = "evaluate";
    m.args = {{"hyp", a.hyp}, {"ref", a.ref}, {"metric", a.metric}, {"case", a.case_mode}};
    m.inputs = {a.hyp, a.ref};
    m.outputs = {a.out};
    m.write(a.out + ".manifest.json");
  }
  return 0;
}

struct AnalyzeArgs {
  std::string ckpt, data, report, out, dump_attention;
  int beam = 8;
  int max_len = 64;
};

template <typename T>
int run_analyze(const AnalyzeArgs& a, const LoadedModel& lm) {
  auto examples = read_examples_jsonl(a.data);
  GraphTransformer<T> model(model_config_from(lm.cfg), lm.vocabs, 0);
  model.restore(load_tensors<T>(a.ckpt));
  std::ofstream out(a.out);
  if (!out) throw DataError("cannot write " + a.out);
  json jreport;

  std::ofstream attn_dump;
  if (!a.dump_attention.empty()) {
    attn_dump.open(a.dump_attention);
    if (!attn_dump) throw DataError("cannot write " + a.dump_attention);
  }
  auto dump_attn = [&](size_t graph_idx, const std::vector<std::vector<Tensor<T>>>& attention) {
    if (!attn_dump) return;
    for (size_t l = 0; l < attention.size(); ++l)
      for (size_t h = 0; h < attention[l].size(); ++h) {
        const Tensor<T>& w = attention[l][h];
        int64_t n1 = w.shape()[0];
        json rows = json::array();
        for (int64_t i = 0; i < n1; ++i) {
          json row = json::array();
          for (int64_t j = 0; j < n1; ++j) row.push_back(double(w[i * n1 + j]));
          rows.push_back(row);
        }
        attn_dump << json{{"graph", graph_idx}, {"layer", l}, {"head", h}, {"matrix", rows}}
                         .dump()
                  << "\n";
      }
  };

  if (a.report == "attn-distance") {
    FwdCtx<T> ctx = model.make_ctx(false, 0);
    AttentionDistance acc(int(model.config().layers), int(model.config().heads));
    for (size_t gi = 0; gi < examples.size(); ++gi) {
      auto enc = model.encode_example(examples[gi], ctx);
      acc.add_graph<T>(enc.attention, examples[gi].paths);
      dump_attn(gi, enc.attention);
    }
    auto avg = acc.averages();
    out << "layer,head,avg_distance\n";
    json rows = json::array();
    for (size_t l = 0; l < avg.size(); ++l)
      for (size_t h = 0; h < avg[l].size(); ++h) {
        out << l << "," << h << "," << avg[l][h] << "\n";
        rows.push_back({{"layer", l}, {"head", h}, {"avg_distance", avg[l][h]}});
      }
    jreport = {{"report", "attn-distance"}, {"rows", rows}};
  } else if (a.report == "size" || a.report == "diameter" || a.report == "reentrancy") {
    std::vector<double> scores;
    std::vector<int> stats;
    for (const auto& ex : examples) {
      if (ex.tokens.empty())
        throw DataError("binned reports need reference sentences in the data file");
      auto gen = model.beam_search(ex, a.beam, a.max_len);
      std::string h;
      for (size_t k = 0; k < gen.tokens.size(); ++k) h += (k ? " " : "") + gen.tokens[k];
      std::string r;
      for (size_t k = 0; k < ex.tokens.size(); ++k) r += (k ? " " : "") + ex.tokens[k];
      scores.push_back(sentence_chrf_pp(h, r));
      stats.push_back(a.report == "size" ? ex.stats.size
                      : a.report == "diameter" ? ex.stats.diameter
                                               : ex.stats.reentrancies);
    }
    auto rep = binned_report(scores, stats, a.report);
    out << "bin,edge,count,macro_chrfpp\n";
    json rows = json::array();
    for (size_t b = 0; b < 4; ++b) {
      out << b << "," << (b < 3 ? std::to_string(rep.edges[b]) : "inf") << "," << rep.counts[b]
          << "," << rep.scores[b] << "\n";
      rows.push_back({{"bin", b},
                      {"edge", b < 3 ? json(rep.edges[b]) : json("inf")},
                      {"count", rep.counts[b]},
                      {"macro_chrfpp", std::isnan(rep.scores[b]) ? json() : json(rep.scores[b])}});
    }
    jreport = {{"report", a.report}, {"rows", rows}};
  } else {
    throw UsageError("unknown report " + a.report);
  }
  {
    std::ofstream jout(a.out + ".json");
    jout << jreport.dump(2) << "\n";
  }

  RunManifest m;
  m.command = "analyze";
  m.args = {{"ckpt", a.ckpt}, {"data", a.data}, {"report", a.report}, {"out", a.out}};
  m.config_digest = lm.cfg.digest();
  m.inputs = {a.ckpt, a.data};
  m.outputs = {a.out, a.out + ".json"};
  if (!a.dump_attention.empty()) m.outputs.push_back(a.dump_attention);
  m.write(a.out + ".manifest.json");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"graph-to-sequence transducer with relation-aware attention"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  PreprocessArgs pa;
  auto* pre = app.add_subcommand("preprocess", "parse graphs, augment, compute relation paths");
  pre->add_option("--format", pa.format)->check(CLI::IsMember({"penman", "conllu"}));
  pre->add_option("--in", pa.in)->required();
  pre->add_option("--out", pa.out)->required();
  pre->add_option("--max-path-len", pa.max_path_len);
  pre->add_option("--path-cap", pa.path_cap);
  pre->add_flag("--skip-bad", pa.skip_bad);
  pre->add_option("--threads", pa.threads);

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "optimize a model on preprocessed data");
  tr->add_option("--config", ta.config);
  tr->add_option("--data", ta.data)->required();
  tr->add_option("--dev", ta.dev);
  tr->add_option("--out-dir", ta.out_dir)->required();
  tr->add_option("--set", ta.overrides, "override config keys (key=value)");
  tr->add_option("--seed", ta.seed, "master seed; fans out to every random stream");
  tr->add_flag("--resume", ta.resume);

  GenerateArgs ga;
  auto* ge = app.add_subcommand("generate", "beam-search decode preprocessed graphs");
  ge->add_option("--ckpt", ga.ckpt)->required();
  ge->add_option("--in", ga.in)->required();
  ge->add_option("--out", ga.out)->required();
  ge->add_option("--beam", ga.beam);
  ge->add_option("--max-len", ga.max_len);
  ge->add_option("--threads", ga.threads);

  EvaluateArgs ea;
  auto* ev = app.add_subcommand("evaluate", "score hypotheses against references");
  ev->add_option("--hyp", ea.hyp)->required();
  ev->add_option("--ref", ea.ref)->required();
  ev->add_option("--metric", ea.metric)->check(CLI::IsMember({"bleu", "chrfpp"}));
  ev->add_option("--case", ea.case_mode)->check(CLI::IsMember({"sensitive", "insensitive"}));
  ev->add_option("--out", ea.out);

  AnalyzeArgs aa;
  auto* an = app.add_subcommand("analyze", "binned performance and attention reports");
  an->add_option("--ckpt", aa.ckpt)->required();
  an->add_option("--data", aa.data)->required();
  an->add_option("--report", aa.report)
      ->required()
      ->check(CLI::IsMember({"size", "diameter", "reentrancy", "attn-distance"}));
  an->add_option("--out", aa.out)->required();
  an->add_option("--beam", aa.beam);
  an->add_option("--max-len", aa.max_len);
  an->add_option("--dump-attention", aa.dump_attention,
                 "also write raw attention weights as JSONL");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (pre->parsed()) return cmd_preprocess(pa);
    if (tr->parsed()) {
      KVConfig cfg = resolve_config(ta.config, ta.overrides);
      if (ta.seed >= 0) cfg.set("seed", std::to_string(ta.seed));
      return cfg.get_str("precision", "fp32") == "fp64" ? run_train<double>(ta, cfg)
                                                        : run_train<float>(ta, cfg);
    }
    if (ge->parsed()) {
      LoadedModel lm = sidecars_for(ga.ckpt);
      return lm.cfg.get_str("precision", "fp32") == "fp64" ? run_generate<double>(ga, lm)
                                                           : run_generate<float>(ga, lm);
    }
    if (ev->parsed()) return cmd_evaluate(ea);
    if (an->parsed()) {
      LoadedModel lm = sidecars_for(aa.ckpt);
      return lm.cfg.get_str("precision", "fp32") == "fp64" ? run_analyze<double>(aa, lm)
                                                           : run_analyze<float>(aa, lm);
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const VocabError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

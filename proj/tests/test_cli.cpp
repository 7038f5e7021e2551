#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "g2s/data.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kBin = G2S_CLI_BIN;
const std::string kFixtures = G2S_FIXTURE_DIR;

struct CmdResult {
  int exit_code;
  std::string output;
};

CmdResult run(const std::string& args) {
  std::string cmd = kBin + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe);
  std::string out;
  char buf[512];
  while (fgets(buf, sizeof(buf), pipe)) out += buf;
  int status = pclose(pipe);
  return {WEXITSTATUS(status), out};
}

std::string temp_dir(const std::string& tag) {
  auto dir = fs::temp_directory_path() / ("g2s_cli_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

std::string samples_dir() {
  // tests/fixtures -> repo root/data/samples
  return (fs::path(kFixtures).parent_path().parent_path() / "data" / "samples").string();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("cli usage errors exit with code 1", "[cli]") {
  REQUIRE(run("").exit_code == 1);
  REQUIRE(run("preprocess").exit_code == 1);          // missing required options
  REQUIRE(run("frobnicate --in x").exit_code == 1);   // unknown subcommand
}

TEST_CASE("preprocess produces consumable JSONL and a manifest", "[cli]") {
  std::string dir = temp_dir("pre");
  std::string out = dir + "/graphs.jsonl";
  auto res = run("preprocess --format penman --in " + samples_dir() + "/amr_tiny.txt --out " + out);
  INFO(res.output);
  REQUIRE(res.exit_code == 0);
  REQUIRE(res.output.find("graphs: 8") != std::string::npos);
  REQUIRE(res.output.find("avg nodes:") != std::string::npos);
  auto examples = g2s::read_examples_jsonl(out);
  REQUIRE(examples.size() == 8);
  // first block reports the running example's statistics
  REQUIRE(examples[0].stats.size == 4);
  REQUIRE(examples[0].stats.diameter == 2);
  REQUIRE(examples[0].stats.reentrancies == 1);
  auto manifest = nlohmann::json::parse(slurp(out + ".manifest.json"));
  REQUIRE(manifest["command"] == "preprocess");
  REQUIRE(manifest["inputs"][0]["fnv1a64"].get<std::string>().size() == 16);

  SECTION("conllu input works too") {
    std::string dout = dir + "/deps.jsonl";
    auto dres = run("preprocess --format conllu --in " + samples_dir() +
                    "/deps_tiny.conllu --out " + dout);
    INFO(dres.output);
    REQUIRE(dres.exit_code == 0);
    REQUIRE(g2s::read_examples_jsonl(dout).size() == 3);
  }
}

TEST_CASE("preprocess error handling", "[cli]") {
  std::string dir = temp_dir("prebad");
  SECTION("empty input exits nonzero") {
    write_file(dir + "/empty.txt", "");
    auto res = run("preprocess --in " + dir + "/empty.txt --out " + dir + "/x.jsonl");
    REQUIRE(res.exit_code == 2);
  }
  SECTION("one bad graph of three fails, --skip-bad keeps the rest") {
    write_file(dir + "/mixed.txt",
               "# ::snt one two\n(a / alpha :ARG0 (b / beta))\n\n"
               "# ::snt broken\n(c / gamma :ARG0 (d / delta)\n\n"
               "# ::snt three four\n(e / epsilon :ARG0 (f / zeta))\n");
    auto strict = run("preprocess --in " + dir + "/mixed.txt --out " + dir + "/m.jsonl");
    REQUIRE(strict.exit_code == 2);
    auto lax = run("preprocess --in " + dir + "/mixed.txt --out " + dir + "/m.jsonl --skip-bad");
    INFO(lax.output);
    REQUIRE(lax.exit_code == 0);
    REQUIRE(lax.output.find("skipped 1") != std::string::npos);
    REQUIRE(g2s::read_examples_jsonl(dir + "/m.jsonl").size() == 2);
  }
  SECTION("missing file is a data error") {
    auto res = run("preprocess --in /nonexistent.txt --out " + dir + "/x.jsonl");
    REQUIRE(res.exit_code == 2);
  }
}

TEST_CASE("train, generate, evaluate and analyze compose", "[cli]") {
  std::string dir = temp_dir("pipeline");
  std::string data = dir + "/graphs.jsonl";
  REQUIRE(run("preprocess --in " + samples_dir() + "/amr_tiny.txt --out " + data).exit_code == 0);

  // desk-size model; enough steps to overfit the 8 samples
  std::string overrides =
      " --set d_model=32 --set heads=2 --set d_ff=48 --set layers=1"
      " --set node_emb_dim=12 --set token_emb_dim=12 --set edge_emb_dim=8"
      " --set char_emb_dim=4 --set char_filters=8 --set char_out_dim=6"
      " --set rel_hidden=8 --set dropout=0 --set unk_rate=0"
      " --set warmup=40 --set max_steps=420 --set eval_every=60 --set batch_size=4"
      " --set beam=2 --set max_decode_len=16 --set seed=3"
      " --set target_accuracy=0.995";
  auto tres = run("train --data " + data + " --dev " + data + " --out-dir " + dir + overrides);
  INFO(tres.output);
  REQUIRE(tres.exit_code == 0);
  REQUIRE(fs::exists(dir + "/last.ckpt"));
  REQUIRE(fs::exists(dir + "/best.ckpt"));
  REQUIRE(fs::exists(dir + "/metrics.csv"));
  REQUIRE(fs::exists(dir + "/vocab.json"));
  REQUIRE(fs::exists(dir + "/manifest.json"));
  {
    std::string csv = slurp(dir + "/metrics.csv");
    REQUIRE(csv.rfind("step,loss,lr,grad_norm,dev_bleu", 0) == 0);
  }

  std::string hyp = dir + "/hyps.txt";
  auto gres = run("generate --ckpt " + dir + "/best.ckpt --in " + data + " --out " + hyp +
                  " --beam 2 --max-len 16");
  INFO(gres.output);
  REQUIRE(gres.exit_code == 0);

  // references straight from the sample corpus
  std::string ref = dir + "/refs.txt";
  {
    auto examples = g2s::read_examples_jsonl(data);
    std::ofstream out(ref);
    for (const auto& ex : examples) {
      for (size_t i = 0; i < ex.tokens.size(); ++i) out << (i ? " " : "") << ex.tokens[i];
      out << "\n";
    }
  }
  auto eres = run("evaluate --hyp " + hyp + " --ref " + ref + " --metric bleu --case insensitive");
  INFO(eres.output);
  REQUIRE(eres.exit_code == 0);
  double score = std::stod(eres.output);
  REQUIRE(score > 90.0);  // overfit corpus decodes its own references

  SECTION("evaluate scores identical files at 100") {
    auto perfect = run("evaluate --hyp " + ref + " --ref " + ref + " --metric bleu");
    REQUIRE(perfect.exit_code == 0);
    REQUIRE(std::stod(perfect.output) == Catch::Approx(100.0));
    auto chrf = run("evaluate --hyp " + ref + " --ref " + ref + " --metric chrfpp");
    REQUIRE(std::stod(chrf.output) == Catch::Approx(100.0));
  }
  SECTION("generation is reproducible") {
    std::string hyp2 = dir + "/hyps2.txt";
    REQUIRE(run("generate --ckpt " + dir + "/best.ckpt --in " + data + " --out " + hyp2 +
                " --beam 2 --max-len 16").exit_code == 0);
    REQUIRE(slurp(hyp) == slurp(hyp2));
  }
  SECTION("analyze writes binned and attention reports") {
    auto ares = run("analyze --ckpt " + dir + "/best.ckpt --data " + data +
                    " --report diameter --out " + dir + "/diameter.csv --beam 2 --max-len 16");
    INFO(ares.output);
    REQUIRE(ares.exit_code == 0);
    std::string rep = slurp(dir + "/diameter.csv");
    REQUIRE(rep.rfind("bin,edge,count,macro_chrfpp", 0) == 0);
    auto jrep = nlohmann::json::parse(slurp(dir + "/diameter.csv.json"));
    int64_t total = 0;
    for (const auto& row : jrep["rows"]) total += row["count"].get<int64_t>();
    REQUIRE(total == 8);
    auto dres = run("analyze --ckpt " + dir + "/best.ckpt --data " + data +
                    " --report attn-distance --out " + dir + "/attn.csv --dump-attention " +
                    dir + "/attn.jsonl");
    REQUIRE(dres.exit_code == 0);
    std::string attn = slurp(dir + "/attn.csv");
    // one row per (layer, head) plus the header
    REQUIRE(std::count(attn.begin(), attn.end(), '\n') == 1 + 1 * 2);
    // raw weights: one JSONL line per (graph, layer, head), square row-ordered matrix
    std::istringstream dump(slurp(dir + "/attn.jsonl"));
    std::string line;
    int lines = 0;
    while (std::getline(dump, line)) {
      auto j = nlohmann::json::parse(line);
      REQUIRE(j["matrix"].size() == j["matrix"][0].size());
      ++lines;
    }
    REQUIRE(lines == 8 * 1 * 2);
  }
  SECTION("checkpoint without sidecars is refused") {
    std::string lone = temp_dir("lone") + "/model.ckpt";
    fs::copy_file(dir + "/best.ckpt", lone);
    auto res = run("generate --ckpt " + lone + " --in " + data + " --out /tmp/never.txt");
    REQUIRE(res.exit_code == 2);
  }
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "bytenmt/cli.hpp"
#include "test_util.hpp"

using bytenmt::testutil::make_temp_dir;
using bytenmt::testutil::read_file;
using bytenmt::testutil::write_file;

namespace {

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

CliResult run_cli(const std::vector<std::string>& args,
                  const std::string& stdin_text = "") {
  std::istringstream in(stdin_text);
  std::ostringstream out, err;
  int code = bytenmt::cli::run(args, in, out, err);
  return {code, out.str(), err.str()};
}

std::string copy_config_json(const std::filesystem::path& dir, int steps,
                             const std::string& fusion = "none",
                             int seed = 1) {
  // Small dense model; quick to optimize on a copy task.
  std::string json = R"({
  "run_name": "copy",
  "seed": )" + std::to_string(seed) +
                     R"(,
  "model": {
    "d_model": 32, "ffn_dim": 64, "heads": 4,
    "enc_layers": 1, "dec_layers": 1,
    "shallow_layers": 1, "block_layers": 1,
    "dropout": 0.0, "embedding": "dense", "fusion": ")" +
                     fusion + R"("
  },
  "data": {
    "train_src": ")" + (dir / "train.src").string() +
                     R"(",
    "train_tgt": ")" + (dir / "train.tgt").string() +
                     R"(",
    "token_budget": 64
  },
  "train": {
    "steps": )" + std::to_string(steps) +
                     R"(,
    "warmup_steps": 30,
    "peak_lr": 0.003,
    "label_smoothing": 0.0
  }
})";
  return json;
}

void write_copy_corpus(const std::filesystem::path& dir) {
  write_file(dir / "train.src", "ab\ncd\nee f\n");
  write_file(dir / "train.tgt", "ab\ncd\nee f\n");
}

}  // namespace

TEST_CASE("tokenize command emits decimal IDs per line") {
  auto r = run_cli({"tokenize"}, "a\n");
  CHECK(r.code == 0);
  CHECK(r.out == "97\n");

  auto specials = run_cli({"tokenize", "--specials"}, "a\n");
  CHECK(specials.out == "257 97 258\n");

  auto spans = run_cli({"tokenize", "--spans"}, "ab cd\n");
  CHECK(spans.out == "0:2:word 2:3:ws 3:5:word\n");
}

TEST_CASE("tokenize reports invalid UTF-8 with a nonzero exit") {
  auto r = run_cli({"tokenize"}, "fine\n\xC3(\n");
  CHECK(r.code == 1);
  CHECK(r.err.find("line 2") != std::string::npos);
}

TEST_CASE("tokenize reads from a file when given") {
  auto dir = make_temp_dir("cli_tok");
  write_file(dir / "in.txt", "hi\n");
  auto r = run_cli({"tokenize", "--input", (dir / "in.txt").string()});
  CHECK(r.code == 0);
  CHECK(r.out == "104 105\n");
}

TEST_CASE("evaluate prints BLEU 100 for identical files") {
  auto dir = make_temp_dir("cli_eval");
  write_file(dir / "hyp", "the cat sat on the mat\nbirds fly very high\n");
  write_file(dir / "ref", "the cat sat on the mat\nbirds fly very high\n");
  auto r = run_cli({"evaluate", "--hyp", (dir / "hyp").string(), "--ref",
                    (dir / "ref").string()});
  CHECK(r.code == 0);
  CHECK(r.out == "BLEU = 100.00\n");
}

TEST_CASE("evaluate fails cleanly on missing files") {
  auto r = run_cli({"evaluate", "--hyp", "/nonexistent/h", "--ref",
                    "/nonexistent/r"});
  CHECK(r.code == 1);
  CHECK(r.err.find("error:") != std::string::npos);
}

TEST_CASE("unknown config keys are rejected by name") {
  auto dir = make_temp_dir("cli_badcfg");
  write_copy_corpus(dir);
  std::string json = copy_config_json(dir, 1);
  json.insert(json.rfind('}'), R"(, "warmup_stepz": 10)");
  write_file(dir / "bad.json", json);
  auto r = run_cli({"train", "--config", (dir / "bad.json").string(),
                    "--run-dir", (dir / "run").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("warmup_stepz") != std::string::npos);
}

TEST_CASE("train echoes its effective config and writes logs") {
  auto dir = make_temp_dir("cli_train");
  write_copy_corpus(dir);
  write_file(dir / "cfg.json", copy_config_json(dir, 4));
  auto r = run_cli({"train", "--config", (dir / "cfg.json").string(),
                    "--run-dir", (dir / "run").string()});
  REQUIRE(r.code == 0);
  CHECK(std::filesystem::exists(dir / "run" / "config.json"));
  CHECK(std::filesystem::exists(dir / "run" / "train.log"));
  CHECK(std::filesystem::exists(dir / "run" / "checkpoint_last.bnc"));
  CHECK(read_file(dir / "run" / "config.json").find("\"seed\": 1") !=
        std::string::npos);
}

TEST_CASE("training runs are reproducible per seed") {
  auto dir = make_temp_dir("cli_repro");
  write_copy_corpus(dir);
  write_file(dir / "cfg.json", copy_config_json(dir, 5));
  auto a = run_cli({"train", "--config", (dir / "cfg.json").string(),
                    "--run-dir", (dir / "run_a").string()});
  auto b = run_cli({"train", "--config", (dir / "cfg.json").string(),
                    "--run-dir", (dir / "run_b").string()});
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  CHECK(read_file(dir / "run_a" / "train.log") ==
        read_file(dir / "run_b" / "train.log"));
}

TEST_CASE("seed override changes the run") {
  auto dir = make_temp_dir("cli_seed");
  write_copy_corpus(dir);
  write_file(dir / "cfg.json", copy_config_json(dir, 5));
  auto a = run_cli({"train", "--config", (dir / "cfg.json").string(),
                    "--run-dir", (dir / "run_a").string()});
  auto b = run_cli({"train", "--config", (dir / "cfg.json").string(),
                    "--run-dir", (dir / "run_b").string(), "--seed", "9"});
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  CHECK(read_file(dir / "run_a" / "train.log") !=
        read_file(dir / "run_b" / "train.log"));
}

TEST_CASE("train --resume continues the same trace") {
  auto dir = make_temp_dir("cli_resume");
  write_copy_corpus(dir);

  write_file(dir / "cfg.json", copy_config_json(dir, 6));
  auto full = run_cli({"train", "--config", (dir / "cfg.json").string(),
                       "--run-dir", (dir / "run_full").string()});
  REQUIRE(full.code == 0);

  write_file(dir / "cfg.json", copy_config_json(dir, 3));
  auto first = run_cli({"train", "--config", (dir / "cfg.json").string(),
                        "--run-dir", (dir / "run_split").string()});
  REQUIRE(first.code == 0);
  write_file(dir / "cfg.json", copy_config_json(dir, 6));
  auto second = run_cli({"train", "--config", (dir / "cfg.json").string(),
                         "--run-dir", (dir / "run_split").string(),
                         "--resume"});
  REQUIRE(second.code == 0);
  CHECK(second.err.find("resuming from step 3") != std::string::npos);
  CHECK(read_file(dir / "run_split" / "train.log") ==
        read_file(dir / "run_full" / "train.log"));
}

TEST_CASE("wsf training on an unspaced corpus warns and proceeds") {
  auto dir = make_temp_dir("cli_wsf");
  write_file(dir / "train.src", "abcd\nefgh\n");
  write_file(dir / "train.tgt", "abcd\nefgh\n");
  write_file(dir / "cfg.json", copy_config_json(dir, 2, "wsf"));
  auto r = run_cli({"train", "--config", (dir / "cfg.json").string(),
                    "--run-dir", (dir / "run").string()});
  CHECK(r.code == 0);
  CHECK(r.err.find("warning") != std::string::npos);
  CHECK(r.err.find("single block") != std::string::npos);
}

TEST_CASE("flag overrides reach the effective config echo") {
  auto dir = make_temp_dir("cli_flags");
  write_copy_corpus(dir);
  write_file(dir / "cfg.json", copy_config_json(dir, 2));
  auto r = run_cli({"train", "--config", (dir / "cfg.json").string(),
                    "--run-dir", (dir / "run").string(), "--fusion", "ncf",
                    "--ls", "0", "--max-bytes", "700"});
  REQUIRE(r.code == 0);
  auto echoed = read_file(dir / "run" / "config.json");
  CHECK(echoed.find("\"fusion\": \"ncf\"") != std::string::npos);
  CHECK(echoed.find("\"shallow_layers\": 0") != std::string::npos);
  CHECK(echoed.find("\"max_bytes\": 700") != std::string::npos);
}

TEST_CASE("train then translate reproduces a memorized copy task") {
  auto dir = make_temp_dir("cli_translate");
  write_copy_corpus(dir);
  write_file(dir / "cfg.json", copy_config_json(dir, 400));
  auto trained = run_cli({"train", "--config", (dir / "cfg.json").string(),
                          "--run-dir", (dir / "run").string()});
  REQUIRE(trained.code == 0);
  // the copy task must be solved: final batch loss under 0.1
  auto pos = trained.out.find("final loss ");
  REQUIRE(pos != std::string::npos);
  CHECK(std::stod(trained.out.substr(pos + 11)) < 0.1);
  auto translated =
      run_cli({"translate", "--checkpoint",
               (dir / "run" / "checkpoint_last.bnc").string(), "--beam", "1"},
              "ab\ncd\n");
  REQUIRE(translated.code == 0);
  CHECK(translated.out == "ab\ncd\n");

  // file-to-file path
  write_file(dir / "in.txt", "ee f\n");
  auto to_file = run_cli({"translate", "--checkpoint",
                          (dir / "run" / "checkpoint_last.bnc").string(),
                          "--input", (dir / "in.txt").string(), "--output",
                          (dir / "out.txt").string()});
  REQUIRE(to_file.code == 0);
  CHECK(read_file(dir / "out.txt") == "ee f\n");
}

TEST_CASE("finetune needs a matching architecture and then runs") {
  auto dir = make_temp_dir("cli_finetune");
  write_copy_corpus(dir);
  write_file(dir / "cfg.json", copy_config_json(dir, 3));
  auto trained = run_cli({"train", "--config", (dir / "cfg.json").string(),
                          "--run-dir", (dir / "run").string()});
  REQUIRE(trained.code == 0);
  const auto ckpt = (dir / "run" / "checkpoint_last.bnc").string();

  // new-domain corpus, different script: byte models need no new vocab
  write_file(dir / "new.src", "\xE0\xA4\x95\n\xE0\xA4\x96\n");
  write_file(dir / "new.tgt", "ka\nkha\n");
  std::string ft_json = copy_config_json(dir, 2);
  auto pos = ft_json.find((dir / "train.src").string());
  ft_json.replace(pos, (dir / "train.src").string().size(),
                  (dir / "new.src").string());
  pos = ft_json.find((dir / "train.tgt").string());
  ft_json.replace(pos, (dir / "train.tgt").string().size(),
                  (dir / "new.tgt").string());
  write_file(dir / "ft.json", ft_json);
  auto ft = run_cli({"finetune", "--checkpoint", ckpt, "--config",
                     (dir / "ft.json").string(), "--run-dir",
                     (dir / "ft_run").string()});
  CHECK(ft.code == 0);

  // architecture mismatch is rejected
  std::string bad = ft_json;
  bad.replace(bad.find("\"heads\": 4"), 10, "\"heads\": 2");
  write_file(dir / "bad.json", bad);
  auto mismatch = run_cli({"finetune", "--checkpoint", ckpt, "--config",
                           (dir / "bad.json").string(), "--run-dir",
                           (dir / "bad_run").string()});
  CHECK(mismatch.code == 1);
  CHECK(mismatch.err.find("architecture") != std::string::npos);
}

TEST_CASE("analyze emits BLEU plus a conserved bucket table") {
  auto dir = make_temp_dir("cli_analyze");
  write_file(dir / "hyp", "der kleine Hund bellt laut heute\n");
  write_file(dir / "ref", "der kleine Hund bellt sehr laut\n");
  auto r = run_cli({"analyze", "--hyp", (dir / "hyp").string(), "--ref",
                    (dir / "ref").string(), "--axis", "word_length",
                    "--edges", "4,6"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("BLEU = ") != std::string::npos);
  CHECK(r.out.find("axis\tword_length") != std::string::npos);
  // 6 reference words split across the buckets
  int64_t total = 0;
  std::istringstream lines(r.out);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty() || line[0] != '[') continue;
    auto tab = line.find('\t');
    auto tab2 = line.find('\t', tab + 1);
    total += std::stoll(line.substr(tab + 1, tab2 - tab - 1));
  }
  CHECK(total == 6);
}

TEST_CASE("analyze fertility axis trains or loads a BPE model") {
  auto dir = make_temp_dir("cli_fert");
  write_file(dir / "hyp", "aa bb\n");
  write_file(dir / "ref", "aa cccc\n");
  write_file(dir / "side", "aa aa aa cccc\n");
  auto r = run_cli({"analyze", "--hyp", (dir / "hyp").string(), "--ref",
                    (dir / "ref").string(), "--axis", "fertility",
                    "--bpe-train", (dir / "side").string(), "--bpe-merges",
                    "1", "--edges", "2"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("axis\tfertility") != std::string::npos);

  auto missing = run_cli({"analyze", "--hyp", (dir / "hyp").string(), "--ref",
                          (dir / "ref").string(), "--axis", "fertility"});
  CHECK(missing.code == 1);
  CHECK(missing.err.find("bpe") != std::string::npos);
}

TEST_CASE("bpe-train writes a loadable merge list") {
  auto dir = make_temp_dir("cli_bpe");
  write_file(dir / "side", "the cat sat on the mat\n");
  auto r = run_cli({"bpe-train", "--input", (dir / "side").string(),
                    "--merges", "5", "--output", (dir / "m.txt").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("wrote 5 merges") != std::string::npos);
  CHECK(std::filesystem::exists(dir / "m.txt"));
}

TEST_CASE("the run-directory root comes from the environment") {
  auto dir = make_temp_dir("cli_root");
  write_copy_corpus(dir);
  write_file(dir / "cfg.json", copy_config_json(dir, 1));
  setenv("BYTENMT_RUN_ROOT", (dir / "roots").string().c_str(), 1);
  auto r = run_cli({"train", "--config", (dir / "cfg.json").string()});
  unsetenv("BYTENMT_RUN_ROOT");
  REQUIRE(r.code == 0);
  CHECK(std::filesystem::exists(dir / "roots" / "copy" / "train.log"));
}

TEST_CASE("missing subcommand or option is a parse error") {
  auto none = run_cli({});
  CHECK(none.code != 0);
  auto missing = run_cli({"train"});
  CHECK(missing.code != 0);
}

#include "bytenmt/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "bytenmt/checkpoint.hpp"
#include "bytenmt/data.hpp"
#include "bytenmt/eval.hpp"
#include "bytenmt/fusion.hpp"
#include "bytenmt/run_config.hpp"
#include "bytenmt/train.hpp"

namespace bytenmt::cli {

namespace {

namespace fs = std::filesystem;

std::vector<std::string> input_lines(const std::string& path,
                                     std::istream& in) {
  if (!path.empty()) return read_lines(path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

std::vector<double> parse_edges(const std::string& csv) {
  std::vector<double> edges;
  std::stringstream stream(csv);
  std::string item;
  while (std::getline(stream, item, ',')) {
    if (item.empty()) continue;
    edges.push_back(std::stod(item));
  }
  return edges;
}

fs::path run_root() {
  if (const char* env = std::getenv("BYTENMT_RUN_ROOT")) return env;
  return "runs";
}

struct TrainCli {
  std::string config_path;
  std::string run_dir;
  uint64_t seed = 0;
  std::string fusion;
  std::string embedding;
  int shallow_layers = -1;
  int block_layers = -1;
  int max_bytes = -1;
  bool resume = false;
};

void apply_overrides(RunConfig& config, const TrainCli& cli, CLI::App* cmd) {
  if (cmd->count("--seed")) config.seed = cli.seed;
  if (cmd->count("--fusion"))
    config.model.fusion = parse_fusion_kind(cli.fusion);
  if (cmd->count("--embedding"))
    config.model.embedding = parse_embedding_mode(cli.embedding);
  if (cmd->count("--ls")) config.model.shallow_layers = cli.shallow_layers;
  if (cmd->count("--lw")) config.model.block_layers = cli.block_layers;
  if (cmd->count("--max-bytes")) config.data.max_bytes = cli.max_bytes;
  config.model.validate();
}

int cmd_tokenize(const std::string& input, bool specials, bool spans,
                 std::istream& in, std::ostream& out, std::ostream& err) {
  auto lines = input_lines(input, in);
  for (size_t i = 0; i < lines.size(); ++i) {
    try {
      if (spans) {
        auto map = word_spans(lines[i]);
        std::string row;
        for (const auto& span : map.spans) {
          if (!row.empty()) row += ' ';
          row += std::to_string(span.start) + ':' + std::to_string(span.end) +
                 ':' + span_kind_name(span.kind);
        }
        out << row << '\n';
      } else {
        auto seq = tokenize(lines[i], specials);
        std::string row;
        for (int id : seq.ids) {
          if (!row.empty()) row += ' ';
          row += std::to_string(id);
        }
        out << row << '\n';
      }
    } catch (const Error& e) {
      err << "line " << (i + 1) << ": " << e.what() << '\n';
      return 1;
    }
  }
  return 0;
}

int cmd_train(const TrainCli& cli, CLI::App* cmd, std::ostream& out,
              std::ostream& err) {
  RunConfig config = load_run_config(cli.config_path);
  apply_overrides(config, cli, cmd);
  if (config.data.train_src.empty() || config.data.train_tgt.empty())
    throw Error("config: data.train_src and data.train_tgt are required");
  auto corpus = load_and_filter(config.data.train_src, config.data.train_tgt,
                                config.data.max_bytes);
  err << "loaded " << corpus.size() << " pairs (" << corpus.dropped
      << " dropped by the " << config.data.max_bytes << "-byte cap)\n";
  if (corpus.empty()) throw Error("train: no pairs left after filtering");

  if (config.model.fusion == FusionKind::kWsf) {
    bool any_multiword = false;
    for (const auto& [src, tgt] : corpus.pairs) {
      int words = 0;
      for (const auto& span : word_spans(src).spans)
        words += span.kind == SpanKind::kWord;
      if (words > 1) {
        any_multiword = true;
        break;
      }
    }
    if (!any_multiword)
      err << "warning: fusion=wsf but every source sentence is a single "
             "block; block attention degenerates to full attention\n";
  }

  fs::path run_dir =
      cli.run_dir.empty() ? run_root() / config.run_name : fs::path(cli.run_dir);
  fs::create_directories(run_dir);
  {
    std::ofstream echo(run_dir / "config.json", std::ios::trunc);
    echo << run_config_to_json(config);
  }

  TrainOptions options;
  options.steps = config.train.steps;
  options.seed = config.seed;
  options.token_budget = config.data.token_budget;
  options.checkpoint_interval = config.train.checkpoint_interval;
  options.adam = config.adam();
  options.run_dir = run_dir.string();

  const auto last = run_dir / "checkpoint_last.bnc";
  if (cli.resume && fs::exists(last)) {
    auto data = load_checkpoint(last.string());
    if (!(data.config == config.model))
      throw Error("resume: checkpoint architecture does not match the config");
    auto model = model_from_checkpoint(data);
    AdamOptimizer optimizer(model.parameters(), options.adam);
    optimizer.load_state(data.optimizer_state, data.step);
    options.start_step = data.step;
    err << "resuming from step " << data.step << '\n';
    auto result = train(model, optimizer, corpus, options);
    out << "trained to step " << result.final_step << ", final loss "
        << result.final_loss << '\n';
  } else {
    TransformerModel<float> model(config.model, config.seed);
    AdamOptimizer optimizer(model.parameters(), options.adam);
    auto result = train(model, optimizer, corpus, options);
    out << "trained to step " << result.final_step << ", final loss "
        << result.final_loss << '\n';
    if (!config.data.valid_src.empty()) {
      auto valid = load_and_filter(config.data.valid_src,
                                   config.data.valid_tgt,
                                   config.data.max_bytes);
      if (!valid.empty())
        out << "valid loss " << corpus_loss(model, valid,
                                            config.train.label_smoothing)
            << '\n';
    }
  }
  out << "run directory: " << run_dir.string() << '\n';
  return 0;
}

int cmd_translate(const std::string& checkpoint, const std::string& input,
                  const std::string& output, int beam, double max_len_factor,
                  std::istream& in, std::ostream& out) {
  auto model = model_from_checkpoint(load_checkpoint(checkpoint));
  auto lines = input_lines(input, in);
  std::ofstream file;
  std::ostream* sink = &out;
  if (!output.empty()) {
    file.open(output, std::ios::trunc);
    if (!file) throw Error("cannot write output: " + output);
    sink = &file;
  }
  for (const auto& line : lines) {
    auto seq = tokenize(line, true);
    auto spans = word_spans(line);
    auto hyp = decode(model, seq, &spans, beam, max_len_factor);
    (*sink) << hyp.text << '\n';
  }
  return 0;
}

int cmd_evaluate(const std::string& hyp_path, const std::string& ref_path,
                 std::ostream& out) {
  const double score = bleu(read_lines(hyp_path), read_lines(ref_path));
  out << "BLEU = " << std::fixed << std::setprecision(2) << score << '\n';
  return 0;
}

int cmd_finetune(const std::string& checkpoint_path,
                 const std::string& config_path, const std::string& run_dir_arg,
                 std::ostream& out, std::ostream& err) {
  RunConfig config = load_run_config(config_path);
  if (config.data.train_src.empty() || config.data.train_tgt.empty())
    throw Error("config: data.train_src and data.train_tgt are required");
  auto data = load_checkpoint(checkpoint_path);
  if (!(data.config == config.model))
    throw Error(
        "finetune: config model section does not match the checkpoint "
        "architecture");
  auto model = model_from_checkpoint(data);
  auto corpus = load_and_filter(config.data.train_src, config.data.train_tgt,
                                config.data.max_bytes);
  err << "loaded " << corpus.size() << " pairs (" << corpus.dropped
      << " dropped)\n";
  if (corpus.empty()) throw Error("finetune: no pairs left after filtering");

  fs::path run_dir = run_dir_arg.empty() ? run_root() / config.run_name
                                         : fs::path(run_dir_arg);
  fs::create_directories(run_dir);
  {
    std::ofstream echo(run_dir / "config.json", std::ios::trunc);
    echo << run_config_to_json(config);
  }
  TrainOptions options;
  options.steps = config.train.steps;
  options.seed = config.seed;
  options.token_budget = config.data.token_budget;
  options.checkpoint_interval = config.train.checkpoint_interval;
  options.adam = config.adam();
  options.run_dir = run_dir.string();
  auto result = finetune(model, corpus, options);
  out << "finetuned for " << result.final_step << " steps, final loss "
      << result.final_loss << '\n';
  out << "run directory: " << run_dir.string() << '\n';
  return 0;
}

int cmd_analyze(const std::string& hyp_path, const std::string& ref_path,
                const std::string& axis_name, const std::string& edges_csv,
                const std::string& bpe_model_path,
                const std::string& bpe_train_path, int bpe_merges,
                std::ostream& out) {
  auto hyp = read_lines(hyp_path);
  auto ref = read_lines(ref_path);
  out << "BLEU = " << std::fixed << std::setprecision(2) << bleu(hyp, ref)
      << '\n';
  const BucketAxis axis = parse_bucket_axis(axis_name);
  std::vector<double> edges = parse_edges(
      edges_csv.empty() ? (axis == BucketAxis::kFertility ? "2,3,4" : "4,8,12")
                        : edges_csv);
  BpeModel bpe;
  const BpeModel* bpe_ptr = nullptr;
  if (axis == BucketAxis::kFertility) {
    if (!bpe_model_path.empty()) {
      bpe = load_bpe(bpe_model_path);
    } else if (!bpe_train_path.empty()) {
      bpe = train_bpe(read_lines(bpe_train_path), bpe_merges);
    } else {
      throw Error(
          "analyze: fertility axis needs --bpe-model or --bpe-train");
    }
    bpe_ptr = &bpe;
  }
  out << render_report(bucket_accuracy(hyp, ref, axis, edges, bpe_ptr));
  return 0;
}

int cmd_bpe_train(const std::string& input, int merges,
                  const std::string& output, std::ostream& out) {
  auto model = train_bpe(read_lines(input), merges);
  save_bpe(model, output);
  out << "wrote " << model.merges.size() << " merges to " << output << '\n';
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::istream& in,
        std::ostream& out, std::ostream& err) {
  CLI::App app{"byte-level neural machine translation toolkit"};
  app.require_subcommand(1);

  // tokenize
  std::string tok_input;
  bool tok_specials = false, tok_spans = false;
  auto* tok = app.add_subcommand(
      "tokenize", "convert text lines to byte token IDs or word spans");
  tok->add_option("--input", tok_input, "input file (default: stdin)");
  tok->add_flag("--specials", tok_specials, "wrap lines in BOS/EOS");
  tok->add_flag("--spans", tok_spans, "emit word spans instead of IDs");

  // train
  TrainCli train_cli;
  auto* trn = app.add_subcommand("train", "train a model from a config file");
  trn->add_option("--config", train_cli.config_path, "run config (JSON)")
      ->required();
  trn->add_option("--run-dir", train_cli.run_dir,
                  "run directory (default: $BYTENMT_RUN_ROOT/<run_name>)");
  trn->add_option("--seed", train_cli.seed, "override config seed");
  trn->add_option("--fusion", train_cli.fusion, "none|ncf|wsf");
  trn->add_option("--embedding", train_cli.embedding, "one_hot|dense");
  trn->add_option("--ls", train_cli.shallow_layers,
                  "conv-fusion shallow layers");
  trn->add_option("--lw", train_cli.block_layers,
                  "block-attention layers");
  trn->add_option("--max-bytes", train_cli.max_bytes,
                  "length cap in bytes (default 800)");
  trn->add_flag("--resume", train_cli.resume,
                "continue from checkpoint_last.bnc in the run directory");

  // translate
  std::string tr_ckpt, tr_input, tr_output;
  int tr_beam = 1;
  double tr_factor = 2.0;
  auto* tra = app.add_subcommand("translate", "decode text with a checkpoint");
  tra->add_option("--checkpoint", tr_ckpt, "model checkpoint")->required();
  tra->add_option("--input", tr_input, "source file (default: stdin)");
  tra->add_option("--output", tr_output, "output file (default: stdout)");
  tra->add_option("--beam", tr_beam, "beam size (1 = greedy)");
  tra->add_option("--max-len-factor", tr_factor,
                  "output length cap as a multiple of the source length");

  // evaluate
  std::string ev_hyp, ev_ref;
  auto* eva = app.add_subcommand("evaluate", "corpus BLEU of hyp vs ref");
  eva->add_option("--hyp", ev_hyp, "hypotheses file")->required();
  eva->add_option("--ref", ev_ref, "references file")->required();

  // finetune
  std::string ft_ckpt, ft_config, ft_run_dir;
  auto* fin = app.add_subcommand(
      "finetune", "continue training a checkpoint on a new corpus");
  fin->add_option("--checkpoint", ft_ckpt, "base checkpoint")->required();
  fin->add_option("--config", ft_config, "run config (JSON)")->required();
  fin->add_option("--run-dir", ft_run_dir, "run directory");

  // analyze
  std::string an_hyp, an_ref, an_axis = "word_length", an_edges;
  std::string an_bpe_model, an_bpe_train;
  int an_bpe_merges = 200;
  auto* ana = app.add_subcommand(
      "analyze", "bucketed word accuracy and BLEU of hyp vs ref");
  ana->add_option("--hyp", an_hyp, "hypotheses file")->required();
  ana->add_option("--ref", an_ref, "references file")->required();
  ana->add_option("--axis", an_axis, "fertility|word_length");
  ana->add_option("--edges", an_edges, "comma-separated bucket edges");
  ana->add_option("--bpe-model", an_bpe_model, "merge list file");
  ana->add_option("--bpe-train", an_bpe_train,
                  "train a BPE model on this corpus side");
  ana->add_option("--bpe-merges", an_bpe_merges,
                  "merges when training (default 200)");

  // bpe-train
  std::string bp_input, bp_output;
  int bp_merges = 1000;
  auto* bpe = app.add_subcommand("bpe-train",
                                 "train a BPE merge list for analysis");
  bpe->add_option("--input", bp_input, "corpus side")->required();
  bpe->add_option("--merges", bp_merges, "number of merges");
  bpe->add_option("--output", bp_output, "merge list output")->required();

  std::vector<std::string> argv_strings;
  argv_strings.push_back("bytenmt");
  argv_strings.insert(argv_strings.end(), args.begin(), args.end());
  std::vector<char*> argv;
  argv.reserve(argv_strings.size());
  for (auto& s : argv_strings) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (app.got_subcommand(tok))
      return cmd_tokenize(tok_input, tok_specials, tok_spans, in, out, err);
    if (app.got_subcommand(trn)) return cmd_train(train_cli, trn, out, err);
    if (app.got_subcommand(tra))
      return cmd_translate(tr_ckpt, tr_input, tr_output, tr_beam, tr_factor,
                           in, out);
    if (app.got_subcommand(eva)) return cmd_evaluate(ev_hyp, ev_ref, out);
    if (app.got_subcommand(fin))
      return cmd_finetune(ft_ckpt, ft_config, ft_run_dir, out, err);
    if (app.got_subcommand(ana))
      return cmd_analyze(an_hyp, an_ref, an_axis, an_edges, an_bpe_model,
                         an_bpe_train, an_bpe_merges, out);
    if (app.got_subcommand(bpe))
      return cmd_bpe_train(bp_input, bp_merges, bp_output, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  err << "error: no command\n";
  return 1;
}

}  // namespace bytenmt::cli

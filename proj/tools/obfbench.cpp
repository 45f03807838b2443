// obfbench: corpus generation, model training, attacks, suites, sweeps and
// reports from the command line.

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "obf/error.hpp"
#include "obf/metrics.hpp"
#include "obf/obfuscator.hpp"
#include "obf/seqmodels.hpp"
#include "obf/suite.hpp"
#include "obf/textkit.hpp"

namespace {

namespace fs = std::filesystem;
using namespace obf;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

struct SyntheticOpts {
  std::size_t vocab_size = 64;
  std::size_t min_len = 3;
  std::size_t max_len = 20;
  std::string reorder = "swap_even_adjacent";
  std::uint64_t seed = 7;
  std::size_t pairs = 2000;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--vocab-size", vocab_size, "Synthetic vocabulary size (content tokens)");
    cmd->add_option("--min-len", min_len, "Shortest synthetic sentence");
    cmd->add_option("--max-len", max_len, "Longest synthetic sentence");
    cmd->add_option("--reorder", reorder, "none | swap_even_adjacent");
    cmd->add_option("--corpus-seed", seed, "Synthetic corpus seed");
    cmd->add_option("--pairs", pairs, "Number of sentence pairs");
  }

  ParallelCorpus generate() const {
    SyntheticLangSpec spec{vocab_size, min_len, max_len, parse_reorder_rule(reorder), seed};
    return gen_synthetic_corpus(spec, pairs);
  }
};

struct TrainOpts {
  models::TrainConfig cfg;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--epochs", cfg.epochs);
    cmd->add_option("--batch-size", cfg.batch_size);
    cmd->add_option("--lr", cfg.learning_rate);
    cmd->add_option("--d-model", cfg.d_model);
    cmd->add_option("--layers", cfg.layers);
    cmd->add_option("--heads", cfg.heads);
    cmd->add_option("--ff-dim", cfg.ff_dim);
    cmd->add_option("--context-len", cfg.max_len, "Model context length");
    cmd->add_option("--heldout-fraction", cfg.heldout_fraction);
  }
};

fs::path out_dir(const Globals& g, const fs::path& fallback) {
  fs::path dir = g.out.empty() ? fallback : fs::path(g.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw DataError("cannot create output dir " + dir.string());
  return dir;
}

/// Corpus for the training commands: --corpus file, else the config's corpus,
/// else the synthetic flags.
ParallelCorpus training_corpus(const Globals& g, const std::string& corpus, const std::string& src_vocab,
                               const std::string& tgt_vocab, const SyntheticOpts& syn) {
  if (!corpus.empty()) {
    if (src_vocab.empty() != tgt_vocab.empty()) throw ConfigError("give both --src-vocab and --tgt-vocab or neither");
    if (!src_vocab.empty()) return read_corpus(corpus, read_vocab(src_vocab), read_vocab(tgt_vocab));
    return read_corpus(corpus);
  }
  if (!g.config.empty()) return bench::load_suite_corpus(bench::load_suite_config(g.config));
  return syn.generate();
}

void print_epoch(const char* what, const models::EpochLog& e) {
  std::fprintf(stderr, "%s epoch %zu  loss %.4f  heldout_acc %.4f\n", what, e.epoch, e.train_loss, e.heldout_acc);
}

bench::SuiteConfig suite_config(const Globals& g) {
  if (g.config.empty()) throw ConfigError("--config is required");
  bench::SuiteConfig cfg = bench::load_suite_config(g.config);
  if (g.seed) cfg.attack.seed = *g.seed;
  if (!g.out.empty()) cfg.out_dir = g.out;
  return cfg;
}

int run(int argc, char** argv) {
  CLI::App app{"Adversarial obfuscator workbench for toy translation models"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "Suite config file (key = value)");
  app.add_option("--seed", g.seed, "Override the seed");
  app.add_option("--out", g.out, "Output directory");

  // gen-corpus
  SyntheticOpts gen_syn;
  auto* gen = app.add_subcommand("gen-corpus", "Write a synthetic parallel corpus with its vocabularies");
  gen_syn.add_to(gen);

  // train-nmt / train-lm
  std::string corpus_path, src_vocab_path, tgt_vocab_path;
  SyntheticOpts train_syn;
  TrainOpts nmt_opts, lm_opts;
  auto* train_nmt = app.add_subcommand("train-nmt", "Train the encoder-decoder translation model");
  train_nmt->add_option("--corpus", corpus_path, "TSV corpus (default: config corpus or synthetic flags)");
  train_nmt->add_option("--src-vocab", src_vocab_path);
  train_nmt->add_option("--tgt-vocab", tgt_vocab_path);
  train_syn.add_to(train_nmt);
  nmt_opts.add_to(train_nmt);

  auto* train_lm = app.add_subcommand("train-lm", "Train the causal language model on the source side");
  train_lm->add_option("--corpus", corpus_path, "TSV corpus (default: config corpus or synthetic flags)");
  train_lm->add_option("--src-vocab", src_vocab_path);
  train_lm->add_option("--tgt-vocab", tgt_vocab_path);
  train_syn.add_to(train_lm);
  lm_opts.add_to(train_lm);

  // attack
  std::string x_text, t_text, method_text = "obfuscator";
  bool with_trace = false;
  auto* attack_cmd = app.add_subcommand("attack", "Attack one sentence pair using the config's models");
  attack_cmd->add_option("-x,--sentence", x_text, "Input sentence")->required();
  attack_cmd->add_option("-t,--target", t_text, "Target sentence to drop")->required();
  attack_cmd->add_option("--method", method_text, "obfuscator | suffix_dropper | random_control");
  attack_cmd->add_flag("--trace", with_trace, "Include the per-iteration trace");

  auto* suite = app.add_subcommand("suite", "Run the attack suite described by --config");
  auto* sweep = app.add_subcommand("sweep", "Run the sweep described by the config's sweep.* keys");

  std::string results_path;
  auto* report = app.add_subcommand("report", "Re-aggregate a results.jsonl into summaries");
  report->add_option("--results", results_path, "results.jsonl (default: <out_dir>/results.jsonl)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  if (*gen) {
    if (g.seed) gen_syn.seed = *g.seed;
    ParallelCorpus c = gen_syn.generate();
    fs::path dir = out_dir(g, "data");
    write_corpus(c, dir / "corpus.tsv");
    write_vocab(c.source_vocab, dir / "src.vocab");
    write_vocab(c.target_vocab, dir / "tgt.vocab");
    std::printf("wrote %zu pairs to %s\n", c.size(), dir.string().c_str());
    return 0;
  }

  if (*train_nmt) {
    if (g.seed) nmt_opts.cfg.seed = *g.seed;
    ParallelCorpus c = training_corpus(g, corpus_path, src_vocab_path, tgt_vocab_path, train_syn);
    auto r = models::train_nmt(c, nmt_opts.cfg, [](const models::EpochLog& e) { print_epoch("nmt", e); });
    fs::path dir = out_dir(g, "models");
    models::save_checkpoint(r.model, dir / "nmt.ckpt");
    write_vocab(c.source_vocab, dir / "src.vocab");
    write_vocab(c.target_vocab, dir / "tgt.vocab");
    models::write_train_log(r.log, dir / "train_log.csv");
    std::printf("heldout_accuracy %.4f\n", r.heldout_accuracy);
    return 0;
  }

  if (*train_lm) {
    if (g.seed) lm_opts.cfg.seed = *g.seed;
    ParallelCorpus c = training_corpus(g, corpus_path, src_vocab_path, tgt_vocab_path, train_syn);
    auto sources = c.sources();
    auto r = models::train_lm(sources, c.source_vocab, lm_opts.cfg,
                              [](const models::EpochLog& e) { print_epoch("lm", e); });
    fs::path dir = out_dir(g, "models");
    models::save_checkpoint(r.model, dir / "lm.ckpt");
    models::write_train_log(r.log, dir / "lm_train_log.csv");
    std::printf("heldout_next_token_accuracy %.4f\n", r.heldout_accuracy);
    return 0;
  }

  if (*attack_cmd) {
    bench::SuiteConfig cfg = suite_config(g);
    cfg.write_trace = with_trace;
    bench::Workspace ws = bench::load_workspace(cfg);
    const Vocabulary& sv = ws.corpus.source_vocab;
    bench::Example ex{0, tokenize(x_text, sv), tokenize(t_text, sv), cfg.attack.seed};
    for (TokenId id : concat({ex.x.span(), ex.t.span()}).ids) {
      if (is_special(id)) throw DataError("input has a token outside the source vocabulary");
    }
    attack::Method m = attack::parse_method(method_text);
    attack::AttackResult r;
    if (m == attack::Method::kObfuscator) r = attack::attack(ex.x, ex.t, ws.nmt, ws.lm, cfg.attack);
    else if (m == attack::Method::kSuffixDropper) r = attack::suffix_dropper(ex.x, ex.t, ws.nmt, ws.lm, cfg.attack);
    else r = attack::random_control(ex.x, ex.t, ws.nmt, ws.lm, cfg.attack);
    std::printf("%s\n", bench::result_record(cfg, ws, ex, r).c_str());
    return 0;
  }

  if (*suite) {
    bench::SuiteConfig cfg = suite_config(g);
    bench::SuiteRun r = bench::run_suite(cfg);
    for (const auto& mr : r.methods) {
      std::printf("%-16s asr %.4f  (%zu/%zu)  mean_bleu %.4f  mean_perplexity %.3f\n", mr.report.method.c_str(),
                  mr.report.asr, mr.report.successes, mr.report.total, mr.report.mean_bleu, mr.report.mean_perplexity);
    }
    return 0;
  }

  if (*sweep) {
    if (g.config.empty()) throw ConfigError("--config is required");
    bench::SweepSpec spec = bench::load_sweep_spec(g.config);
    if (g.seed) spec.base.attack.seed = *g.seed;
    if (!g.out.empty()) spec.base.out_dir = g.out;
    spec.validate();
    bench::Workspace ws = bench::load_workspace(spec.base);
    auto curve = spec.kind == bench::SweepKind::kTargetLength ? bench::sweep_target_length(spec, ws)
                                                               : bench::sweep_iterations(spec, ws);
    fs::path dir = out_dir(g, spec.base.out_dir);
    std::string csv = bench::curve_csv(spec.kind, curve);
    std::ofstream(dir / ("sweep_" + std::string(bench::to_string(spec.kind)) + ".csv"), std::ios::binary) << csv;
    std::fputs(csv.c_str(), stdout);
    return 0;
  }

  if (*report) {
    bench::SuiteConfig cfg = suite_config(g);
    ParallelCorpus corpus = bench::load_suite_corpus(cfg);
    fs::path path = results_path.empty() ? cfg.out_dir / "results.jsonl" : fs::path(results_path);
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    std::map<std::string, std::vector<bench::ParsedRecord>> by_method;
    std::vector<std::string> order;
    for (std::string line; std::getline(in, line);) {
      if (line.empty()) continue;
      auto rec = bench::parse_result_record(line, corpus.source_vocab, corpus.target_vocab);
      std::string m(attack::to_string(rec.result.method));
      if (!by_method.count(m)) order.push_back(m);
      by_method[m].push_back(std::move(rec));
    }
    if (order.empty()) throw DataError("no records in " + path.string());
    for (const auto& m : order) {
      std::vector<metrics::LabelledResult> labelled;
      for (const auto& rec : by_method[m]) labelled.push_back({rec.id, &rec.result});
      auto rep = metrics::aggregate(labelled, cfg.attack.alpha, corpus.source_vocab, m);
      std::fputs(metrics::report_csv(rep).c_str(), stdout);
    }
    return 0;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const obf::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const obf::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const obf::NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 3;
  }
}

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "obf/metrics.hpp"
#include "obf/obfuscator.hpp"
#include "obf/seqmodels.hpp"
#include "obf/textkit.hpp"

namespace obf::bench {

/// Everything one suite run needs. Loaded from a flat `key = value` file;
/// see parse_suite_config for the keys.
struct SuiteConfig {
  std::filesystem::path nmt_checkpoint;
  std::filesystem::path lm_checkpoint;

  // Either a TSV corpus (with its vocab files) or a synthetic spec.
  std::filesystem::path corpus;
  std::filesystem::path source_vocab;
  std::filesystem::path target_vocab;
  SyntheticLangSpec synthetic{64, 3, 20, ReorderRule::kSwapEvenAdjacent, 7};
  std::size_t synthetic_pairs = 2000;

  /// Sentences are taken in order from the held-out tail of the corpus.
  std::size_t suite_size = 50;
  double heldout_fraction = 0.1;

  std::vector<std::string> targets;
  attack::AttackConfig attack;
  std::vector<attack::Method> methods{attack::Method::kObfuscator};
  std::filesystem::path out_dir = "out";
  std::size_t parallelism = 1;
  bool write_trace = false;

  /// Throws ConfigError.
  void validate() const;
};

/// Keys (one per line, '#' starts a comment, blank lines ignored):
///   nmt_checkpoint, lm_checkpoint, corpus, source_vocab, target_vocab,
///   synthetic.vocab_size, synthetic.min_len, synthetic.max_len,
///   synthetic.reorder, synthetic.seed, synthetic.pairs,
///   suite.size, suite.heldout_fraction,
///   target (repeatable), methods (comma separated),
///   gamma, iterations, k, alpha, beta, optimizer, seed, exclude_special,
///   out_dir, parallelism, trace,
///   sweep.kind, sweep.grid, sweep.base_target.
/// Throws ConfigError on unknown keys, duplicates or malformed values.
SuiteConfig parse_suite_config(std::string_view text);
SuiteConfig load_suite_config(const std::filesystem::path& path);

/// Canonical `key = value` rendering; parse_suite_config round-trips it.
std::string render_suite_config(const SuiteConfig& cfg);

/// The corpus named by the config, read from disk or regenerated.
ParallelCorpus load_suite_corpus(const SuiteConfig& cfg);

/// Models plus the corpus they were checked against.
struct Workspace {
  ParallelCorpus corpus;
  models::Seq2SeqModel nmt;
  models::CausalLMModel lm;
};

/// Loads both checkpoints and the corpus; throws DataError when either
/// checkpoint was trained on different vocabularies.
Workspace load_workspace(const SuiteConfig& cfg);

struct Example {
  std::size_t id = 0;
  TokenSeq x;
  TokenSeq t;
  std::uint64_t seed = 0;
};

/// One (sentence, target) pair per example; id = sentence * |targets| + target.
std::vector<Example> build_examples(const SuiteConfig& cfg, const ParallelCorpus& corpus);

/// Per-example seed; identical for every method on that example.
std::uint64_t example_seed(std::uint64_t base, std::size_t id);

struct MethodRun {
  attack::Method method;
  std::vector<attack::AttackResult> results;  // aligned with SuiteRun::examples
  metrics::MetricReport report;
};

struct SuiteRun {
  std::vector<Example> examples;
  std::vector<MethodRun> methods;
};

/// Runs every configured method on every example across cfg.parallelism
/// workers. The result does not depend on the worker count.
SuiteRun execute_suite(const SuiteConfig& cfg, const Workspace& ws);

/// results.jsonl, summary_<method>.csv, report.json and run.log in
/// cfg.out_dir. Only run.log carries timestamps.
void write_suite_outputs(const SuiteConfig& cfg, const Workspace& ws, const SuiteRun& run);

/// load_workspace + execute_suite + write_suite_outputs.
SuiteRun run_suite(const SuiteConfig& cfg);

/// One JSONL record. Exposed for tests and the report command.
std::string result_record(const SuiteConfig& cfg, const Workspace& ws, const Example& ex,
                          const attack::AttackResult& r);

struct ParsedRecord {
  std::size_t id = 0;
  attack::AttackResult result;
};

/// Inverse of result_record (the trace is restored only when present).
/// Throws DataError on malformed records.
ParsedRecord parse_result_record(std::string_view line, const Vocabulary& source_vocab,
                                 const Vocabulary& target_vocab);

enum class SweepKind { kTargetLength, kIterationBudget };

std::string_view to_string(SweepKind k);
SweepKind parse_sweep_kind(std::string_view text);

struct SweepSpec {
  SweepKind kind = SweepKind::kTargetLength;
  std::vector<std::size_t> grid;
  SuiteConfig base;
  std::string base_target;  // target_length only; defaults to base.targets[0]

  /// Throws ConfigError: empty or non-increasing grid.
  void validate() const;
};

/// Reads the sweep.* keys next to an ordinary suite config.
SweepSpec parse_sweep_spec(std::string_view text);
SweepSpec load_sweep_spec(const std::filesystem::path& path);

struct CurvePoint {
  std::size_t value = 0;  // target length or iteration budget
  double asr = 0;
  double mean_distance = 0;
};

/// Attacks with each token prefix of the base target, using the first
/// configured method. Throws ConfigError when a grid value exceeds the base
/// length.
std::vector<CurvePoint> sweep_target_length(const SweepSpec& spec, const Workspace& ws);

/// One run at max(grid); asr(N) counts successes with iterations_used <= N.
std::vector<CurvePoint> sweep_iterations(const SweepSpec& spec, const Workspace& ws);

/// Header then one row per point: `<length|iterations>,asr,mean_distance`.
std::string curve_csv(SweepKind kind, std::span<const CurvePoint> curve);

}  // namespace obf::bench

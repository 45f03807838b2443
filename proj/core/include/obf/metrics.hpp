#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "obf/seqmodels.hpp"
#include "obf/textkit.hpp"

namespace obf::attack {
struct AttackResult;
}

namespace obf::metrics {

/// Unit-cost edit distance over token ids.
std::size_t levenshtein(std::span<const TokenId> a, std::span<const TokenId> b);
inline std::size_t levenshtein(const TokenSeq& a, const TokenSeq& b) { return levenshtein(a.span(), b.span()); }

/// Floor value used for zero n-gram match counts: matches = kBleuEpsilon.
inline constexpr double kBleuEpsilon = 0.1;
inline constexpr const char* kBleuSmoothingName = "sentence-bleu-4gram-epsilon-0.1";

/// Sentence BLEU (1..4-grams, epsilon smoothing, brevity penalty). Empty
/// hypothesis scores 0. Throws DataError when `ref` is empty.
double bleu(const TokenSeq& hyp, const TokenSeq& ref);

/// exp(lm_loss(seq)).
double perplexity(const TokenSeq& seq, const models::CausalLMModel& lm);
/// Same exponentiation applied to an already computed loss.
inline double perplexity_from_loss(double lm_loss_value);

struct ExampleMetrics {
  std::size_t id = 0;
  bool success = false;
  std::size_t edit_distance = 0;
  double bleu = 0;
  double lm_loss = 0;
  double perplexity = 0;
  std::string omega;  // empty when no obfuscator was found
};

struct MetricReport {
  std::string method;
  double asr = 0;
  double mean_bleu = 0;
  double mean_lm_loss = 0;
  double mean_perplexity = 0;
  std::size_t successes = 0;
  std::size_t total = 0;
  std::vector<ExampleMetrics> per_example;
};

struct LabelledResult {
  std::size_t id;
  const attack::AttackResult* result;
};

/// Recomputes success from each result's stored translations (and its beta
/// cap, when set) and averages the per-example metrics. Throws DataError on
/// an empty list or when a stored success flag disagrees with the
/// recomputation.
MetricReport aggregate(std::span<const LabelledResult> results, std::size_t alpha, const Vocabulary& source_vocab,
                       const std::string& method = {});

/// Summary CSV: header, one row per example, then a summary row. The
/// bertscore column is reserved and always empty.
std::string report_csv(const MetricReport& report);

}  // namespace obf::metrics

#include <cmath>

inline double obf::metrics::perplexity_from_loss(double lm_loss_value) { return std::exp(lm_loss_value); }

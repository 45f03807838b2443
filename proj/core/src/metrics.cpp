#include "obf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "obf/error.hpp"
#include "obf/obfuscator.hpp"

namespace obf::metrics {

std::size_t levenshtein(std::span<const TokenId> a, std::span<const TokenId> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

namespace {

using NGram = std::vector<TokenId>;

std::map<NGram, std::size_t> ngram_counts(const TokenSeq& s, std::size_t n) {
  std::map<NGram, std::size_t> counts;
  for (std::size_t i = 0; i + n <= s.length(); ++i) ++counts[NGram(s.ids.begin() + i, s.ids.begin() + i + n)];
  return counts;
}

}  // namespace

double bleu(const TokenSeq& hyp, const TokenSeq& ref) {
  if (ref.empty()) throw DataError("bleu: reference is empty");
  if (hyp.empty()) return 0.0;
  double log_sum = 0;
  for (std::size_t n = 1; n <= 4; ++n) {
    auto h = ngram_counts(hyp, n);
    auto r = ngram_counts(ref, n);
    std::size_t total = hyp.length() >= n ? hyp.length() - n + 1 : 0;
    std::size_t matched = 0;
    for (const auto& [gram, count] : h) {
      auto it = r.find(gram);
      if (it != r.end()) matched += std::min(count, it->second);
    }
    double p;
    if (total == 0) {
      p = kBleuEpsilon;
    } else if (matched == 0) {
      p = kBleuEpsilon / static_cast<double>(total);
    } else {
      p = static_cast<double>(matched) / static_cast<double>(total);
    }
    log_sum += std::log(p);
  }
  double bp = std::min(1.0, std::exp(1.0 - static_cast<double>(ref.length()) / static_cast<double>(hyp.length())));
  return std::clamp(bp * std::exp(log_sum / 4.0), 0.0, 1.0);
}

double perplexity(const TokenSeq& seq, const models::CausalLMModel& lm) {
  if (seq.empty()) throw DataError("perplexity: sequence is empty");
  return perplexity_from_loss(models::lm_loss(lm, seq));
}

MetricReport aggregate(std::span<const LabelledResult> results, std::size_t alpha, const Vocabulary& source_vocab,
                       const std::string& method) {
  if (results.empty()) throw DataError("aggregate: no results");
  MetricReport report;
  report.method = method;
  report.total = results.size();
  double bleu_sum = 0, lm_sum = 0, ppl_sum = 0;
  for (const auto& [id, r] : results) {
    std::size_t dist = levenshtein(r->adversarial_translation, r->original_translation);
    bool ok = dist <= alpha && (!r->config.beta || r->lm_loss_value <= *r->config.beta);
    if (ok != r->success || dist != r->edit_distance) {
      throw DataError("aggregate: stored outcome of example " + std::to_string(id) + " disagrees with recomputation");
    }
    ExampleMetrics m;
    m.id = id;
    m.success = ok;
    m.edit_distance = dist;
    m.bleu = r->original_translation.empty() ? 0.0 : bleu(r->adversarial_translation, r->original_translation);
    m.lm_loss = r->lm_loss_value;
    m.perplexity = perplexity_from_loss(r->lm_loss_value);
    if (r->omega) m.omega = source_vocab.token(*r->omega);
    report.successes += ok ? 1 : 0;
    bleu_sum += m.bleu;
    lm_sum += m.lm_loss;
    ppl_sum += m.perplexity;
    report.per_example.push_back(std::move(m));
  }
  auto n = static_cast<double>(report.total);
  report.asr = static_cast<double>(report.successes) / n;
  report.mean_bleu = bleu_sum / n;
  report.mean_lm_loss = lm_sum / n;
  report.mean_perplexity = ppl_sum / n;
  return report;
}

namespace {

std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::string report_csv(const MetricReport& report) {
  std::ostringstream out;
  out << "id,method,success,edit_distance,bleu,lm_loss,perplexity,omega,bertscore\n";
  for (const auto& m : report.per_example) {
    out << m.id << ',' << report.method << ',' << (m.success ? 1 : 0) << ',' << m.edit_distance << ','
        << fixed(m.bleu) << ',' << fixed(m.lm_loss) << ',' << fixed(m.perplexity) << ',' << m.omega << ",\n";
  }
  out << "summary," << report.method << ',' << fixed(report.asr) << ",," << fixed(report.mean_bleu) << ','
      << fixed(report.mean_lm_loss) << ',' << fixed(report.mean_perplexity) << ",,\n";
  return out.str();
}

}  // namespace obf::metrics

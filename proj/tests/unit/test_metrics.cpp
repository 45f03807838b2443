#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "obf/error.hpp"
#include "obf/metrics.hpp"
#include "obf/obfuscator.hpp"
#include "support/oracles.hpp"

namespace obf::metrics {
namespace {

using testing::levenshtein_memo;
using testing::tiny_arch;

TokenSeq random_seq(std::mt19937_64& rng, std::size_t max_len, TokenId alphabet) {
  std::uniform_int_distribution<std::size_t> len(0, max_len);
  std::uniform_int_distribution<TokenId> tok(4, 4 + alphabet - 1);
  TokenSeq s;
  std::size_t n = len(rng);
  for (std::size_t i = 0; i < n; ++i) s.ids.push_back(tok(rng));
  return s;
}

// Direct transcription of smoothed sentence BLEU: list every n-gram, count
// clipped matches by scanning, then take the geometric mean.
double bleu_oracle(const std::vector<TokenId>& hyp, const std::vector<TokenId>& ref) {
  if (hyp.empty()) return 0.0;
  double log_sum = 0;
  for (std::size_t n = 1; n <= 4; ++n) {
    std::vector<std::vector<TokenId>> h, r;
    for (std::size_t i = 0; i + n <= hyp.size(); ++i) h.emplace_back(hyp.begin() + i, hyp.begin() + i + n);
    for (std::size_t i = 0; i + n <= ref.size(); ++i) r.emplace_back(ref.begin() + i, ref.begin() + i + n);
    std::vector<std::vector<TokenId>> seen;
    double matched = 0;
    for (const auto& g : h) {
      if (std::find(seen.begin(), seen.end(), g) != seen.end()) continue;
      seen.push_back(g);
      auto ch = std::count(h.begin(), h.end(), g), cr = std::count(r.begin(), r.end(), g);
      matched += static_cast<double>(std::min(ch, cr));
    }
    double total = static_cast<double>(h.size());
    double p = total == 0 ? 0.1 : (matched == 0 ? 0.1 / total : matched / total);
    log_sum += std::log(p);
  }
  double bp = std::min(1.0, std::exp(1.0 - static_cast<double>(ref.size()) / static_cast<double>(hyp.size())));
  return std::clamp(bp * std::exp(log_sum / 4), 0.0, 1.0);
}

TEST(Levenshtein, KittenSitting) {
  // k i t t e n / s i t t i n g
  TokenSeq kitten{10, 8, 19, 19, 4, 13}, sitting{18, 8, 19, 19, 8, 13, 6};
  EXPECT_EQ(levenshtein(kitten, sitting), 3u);
}

TEST(Levenshtein, EdgeCases) {
  TokenSeq empty, abc{4, 5, 6};
  EXPECT_EQ(levenshtein(empty, empty), 0u);
  EXPECT_EQ(levenshtein(empty, abc), 3u);
  EXPECT_EQ(levenshtein(abc, empty), 3u);
  EXPECT_EQ(levenshtein(abc, abc), 0u);
}

TEST(Levenshtein, MatchesMemoisedRecursionOn500Pairs) {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 500; ++i) {
    TokenSeq a = random_seq(rng, 12, 5), b = random_seq(rng, 12, 5);
    ASSERT_EQ(levenshtein(a, b), levenshtein_memo(a.ids, b.ids)) << "pair " << i;
  }
}

TEST(Levenshtein, IsAMetric) {
  std::mt19937_64 rng(22);
  for (int i = 0; i < 200; ++i) {
    TokenSeq a = random_seq(rng, 9, 4), b = random_seq(rng, 9, 4), c = random_seq(rng, 9, 4);
    EXPECT_EQ(levenshtein(a, b), levenshtein(b, a));
    EXPECT_LE(levenshtein(a, c), levenshtein(a, b) + levenshtein(b, c));
    EXPECT_EQ(levenshtein(a, b) == 0, a == b);
  }
}

TEST(Bleu, HandComputedExample) {
  TokenSeq hyp{4, 5, 6, 7}, ref{4, 5, 6, 8};
  // precisions 3/4, 2/3, 1/2 and 0.1/1 (one 4-gram, unmatched); no brevity penalty
  double expected = std::pow(0.75 * (2.0 / 3.0) * 0.5 * 0.1, 0.25);
  EXPECT_NEAR(bleu(hyp, ref), expected, 1e-12);
}

TEST(Bleu, BrevityPenalty) {
  TokenSeq hyp{4, 5, 6, 7}, ref{4, 5, 6, 7, 8, 9};
  EXPECT_NEAR(bleu(hyp, ref), std::exp(1.0 - 6.0 / 4.0), 1e-12);
}

TEST(Bleu, IdenticalSentencesScoreOne) {
  std::mt19937_64 rng(23);
  for (int i = 0; i < 100; ++i) {
    TokenSeq s = random_seq(rng, 15, 8);
    if (s.length() < 4) continue;
    EXPECT_DOUBLE_EQ(bleu(s, s), 1.0);
  }
}

TEST(Bleu, MatchesScanningOracleAndStaysInRange) {
  std::mt19937_64 rng(24);
  for (int i = 0; i < 300; ++i) {
    TokenSeq h = random_seq(rng, 10, 4), r = random_seq(rng, 10, 4);
    if (r.empty()) continue;
    double b = bleu(h, r);
    EXPECT_GE(b, 0.0);
    EXPECT_LE(b, 1.0);
    EXPECT_NEAR(b, bleu_oracle(h.ids, r.ids), 1e-12) << "pair " << i;
  }
}

TEST(Bleu, InvariantUnderConsistentRelabelling) {
  std::mt19937_64 rng(25);
  std::vector<TokenId> perm(6);
  std::iota(perm.begin(), perm.end(), 4);
  std::shuffle(perm.begin(), perm.end(), rng);
  auto relabel = [&](TokenSeq s) {
    for (auto& id : s.ids) id = perm[id - 4];
    return s;
  };
  for (int i = 0; i < 100; ++i) {
    TokenSeq h = random_seq(rng, 10, 6), r = random_seq(rng, 10, 6);
    if (r.empty()) continue;
    EXPECT_DOUBLE_EQ(bleu(h, r), bleu(relabel(h), relabel(r)));
  }
}

TEST(Bleu, EmptyInputs) {
  TokenSeq empty, s{4, 5};
  EXPECT_EQ(bleu(empty, s), 0.0);
  EXPECT_THROW(bleu(s, empty), DataError);
}

TEST(Perplexity, IsExpOfLmLossBitForBit) {
  models::CausalLMModel lm(tiny_arch(models::ModelKind::kCausalLM, 16), 5);
  std::mt19937_64 rng(26);
  for (int i = 0; i < 50; ++i) {
    TokenSeq s = random_seq(rng, 10, 12);
    if (s.empty()) s.ids.push_back(4);
    EXPECT_EQ(perplexity(s, lm), std::exp(models::lm_loss(lm, s)));
  }
  EXPECT_THROW(perplexity(TokenSeq{}, lm), DataError);
}

TEST(Perplexity, UntrainedModelIsCloseToUniform) {
  models::CausalLMModel lm(tiny_arch(models::ModelKind::kCausalLM, 16), 6);
  double p = perplexity(TokenSeq{4, 5, 6, 7, 8}, lm);
  EXPECT_GT(p, 12.0);
  EXPECT_LT(p, 21.0);
}

// Sentences walk the content ids in a fixed cycle, so order carries nearly
// all of the information an LM can learn.
TEST(Perplexity, TrainedModelPrefersInDistributionOrder) {
  std::vector<std::string> lines;
  std::mt19937_64 rng(27);
  std::uniform_int_distribution<int> start(0, 11), len(5, 9);
  for (int i = 0; i < 700; ++i) {
    std::ostringstream s;
    int st = start(rng), n = len(rng);
    for (int j = 0; j < n; ++j) s << (j ? " " : "") << "c" << (st + j) % 12;
    lines.push_back(s.str());
  }
  Vocabulary vocab = build_vocab(lines);
  std::vector<TokenSeq> train, test;
  for (std::size_t i = 0; i < lines.size(); ++i) (i < 600 ? train : test).push_back(tokenize(lines[i], vocab));
  models::TrainConfig cfg;
  cfg.epochs = 10;
  cfg.d_model = 32;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.ff_dim = 64;
  cfg.max_len = 16;
  cfg.warmup_steps = 20;
  auto lm = models::train_lm(train, vocab, cfg).model;

  int better = 0;
  for (const auto& s : test) {
    TokenSeq shuffled = s;
    while (shuffled == s) std::shuffle(shuffled.ids.begin(), shuffled.ids.end(), rng);
    better += perplexity(s, lm) < perplexity(shuffled, lm) ? 1 : 0;
  }
  EXPECT_GE(better, 80);
}

attack::AttackResult fake_result(TokenSeq original, TokenSeq adversarial, bool success, double lm_loss,
                                 std::optional<TokenId> omega) {
  attack::AttackResult r;
  r.original_translation = std::move(original);
  r.adversarial_translation = std::move(adversarial);
  r.edit_distance = levenshtein_memo(r.adversarial_translation.ids, r.original_translation.ids);
  r.success = success;
  r.lm_loss_value = lm_loss;
  r.omega = omega;
  return r;
}

Vocabulary small_vocab() {
  std::vector<std::string> lines{"a b c d e f"};
  return build_vocab(lines);
}

TEST(Aggregate, CountsAndMeans) {
  auto a = fake_result({4, 5, 6, 7, 8, 9}, {4, 5}, true, 1.0, 4);
  auto b = fake_result({4, 5, 6}, {4, 5, 6}, false, 3.0, std::nullopt);
  auto c = fake_result({4, 5, 6, 7, 8, 9, 4}, {5}, false, 2.0, std::nullopt);  // distance 6
  std::vector<LabelledResult> rs{{0, &a}, {1, &b}, {2, &c}};
  // b's distance is 0 but it is flagged as a failure: stored and recomputed flags must agree.
  EXPECT_THROW(aggregate(rs, 5, small_vocab(), "obfuscator"), DataError);

  b = fake_result({4, 5, 6}, {4, 5, 6}, true, 3.0, 5);
  MetricReport m = aggregate(rs, 5, small_vocab(), "obfuscator");
  EXPECT_EQ(m.total, 3u);
  EXPECT_EQ(m.successes, 2u);
  EXPECT_DOUBLE_EQ(m.asr, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.mean_lm_loss, 2.0);
  EXPECT_DOUBLE_EQ(m.mean_perplexity, (std::exp(1.0) + std::exp(3.0) + std::exp(2.0)) / 3);
  ASSERT_EQ(m.per_example.size(), 3u);
  EXPECT_EQ(m.per_example[0].omega, "a");
  EXPECT_EQ(m.per_example[1].omega, "b");
  EXPECT_EQ(m.per_example[2].omega, "");
  EXPECT_EQ(m.per_example[2].edit_distance, 6u);
  EXPECT_DOUBLE_EQ(m.per_example[1].bleu, bleu_oracle({4, 5, 6}, {4, 5, 6}));
}

TEST(Aggregate, BetaCapIsPartOfSuccess) {
  auto a = fake_result({4, 5}, {4, 5}, true, 4.0, 4);
  a.config.beta = 3.0;
  std::vector<LabelledResult> rs{{0, &a}};
  EXPECT_THROW(aggregate(rs, 5, small_vocab()), DataError);
  a.success = false;
  a.omega.reset();
  EXPECT_EQ(aggregate(rs, 5, small_vocab()).successes, 0u);
}

TEST(Aggregate, EmptyOrInconsistentInputs) {
  std::vector<LabelledResult> none;
  EXPECT_THROW(aggregate(none, 5, small_vocab()), DataError);
  auto a = fake_result({4, 5}, {6, 7}, false, 1.0, std::nullopt);
  a.edit_distance = 0;
  std::vector<LabelledResult> rs{{0, &a}};
  EXPECT_THROW(aggregate(rs, 5, small_vocab()), DataError);
}

TEST(ReportCsv, Format) {
  auto a = fake_result({4, 5, 6, 7}, {4, 5, 6, 7}, true, 0.5, 6);
  auto b = fake_result({4, 5, 6, 7, 8, 9, 4, 5}, {9}, false, 1.5, std::nullopt);
  std::vector<LabelledResult> rs{{3, &a}, {8, &b}};
  std::string csv = report_csv(aggregate(rs, 5, small_vocab(), "suffix_dropper"));
  std::istringstream in(csv);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0], "id,method,success,edit_distance,bleu,lm_loss,perplexity,omega,bertscore");
  EXPECT_EQ(lines[1], "3,suffix_dropper,1,0,1.000000,0.500000,1.648721,c,");
  EXPECT_EQ(lines[2].substr(0, 19), "8,suffix_dropper,0,");
  EXPECT_EQ(lines[2].back(), ',');
  EXPECT_EQ(lines[3].substr(0, 33), "summary,suffix_dropper,0.500000,,");
}

}  // namespace
}  // namespace obf::metrics

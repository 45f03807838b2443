#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "obf/seqmodels.hpp"
#include "obf/tensor.hpp"
#include "obf/textkit.hpp"

namespace obf::attack {

using grad::TensorF;

enum class Optimizer { kAdam, kSgd };
enum class Method { kObfuscator, kSuffixDropper, kRandomControl };

std::string_view to_string(Optimizer o);
std::string_view to_string(Method m);
Optimizer parse_optimizer(std::string_view text);
Method parse_method(std::string_view text);

struct AttackConfig {
  double gamma = 0.04;
  std::size_t iterations = 100;  // N
  std::size_t k = 20;
  std::size_t alpha = 5;
  std::optional<double> beta;  // optional post-hoc LM-loss cap
  Optimizer optimizer = Optimizer::kAdam;
  std::uint64_t seed = 0;
  bool exclude_special = true;

  /// Throws ConfigError. `vocab_size` bounds k by the candidate pool.
  void validate(std::size_t vocab_size) const;

  friend bool operator==(const AttackConfig&, const AttackConfig&) = default;
};

struct TraceEntry {
  std::size_t iteration = 0;
  TokenId candidate = -1;
  double adv_loss = 0;  // L_Adv with the candidate token in place
  double lm_loss = 0;   // L_LM of x || candidate || t
  std::size_t distance = 0;

  friend bool operator==(const TraceEntry&, const TraceEntry&) = default;
};

struct BestAttempt {
  TokenId token = -1;
  std::size_t distance = std::numeric_limits<std::size_t>::max();

  friend bool operator==(const BestAttempt&, const BestAttempt&) = default;
};

/// Outcome of one attack. On failure `omega` is empty and the adversarial
/// fields describe the best attempt, so every result carries x || w || t.
struct AttackResult {
  Method method = Method::kObfuscator;
  AttackConfig config;
  bool success = false;
  std::optional<TokenId> omega;
  std::size_t iterations_used = 0;
  TokenSeq adversarial_input;
  TokenSeq original_translation;
  TokenSeq adversarial_translation;
  std::size_t edit_distance = 0;
  double lm_loss_value = 0;
  BestAttempt best_attempt;
  std::vector<TraceEntry> trace;
  bool stagnated = false;  // suffix_dropper hit a fixed point

  friend bool operator==(const AttackResult&, const AttackResult&) = default;
};

/// Ids eligible as obfuscators: every id, or only content ids when
/// `exclude_special` is set.
std::vector<TokenId> candidate_pool(std::size_t vocab_size, bool exclude_special);

/// Uniform draw from the candidate pool. Throws DataError on an empty pool.
TokenId init_omega(std::span<const TokenId> pool, std::mt19937_64& rng);

/// Persistent optimiser state across iterations of one attack.
struct OptimizerState {
  std::vector<double> m, v;
  std::size_t t = 0;
};

/// sgd: e - gamma * g. adam: bias-corrected Adam (0.9, 0.999, 1e-8).
/// Throws NumericError on a non-finite gradient.
TensorF grad_step(const TensorF& e_omega, const TensorF& grad, OptimizerState& state, const AttackConfig& cfg);

/// The k rows of `table` most cosine-similar to `e_omega`, best first, ties
/// to the lower id. Excluded ids and zero rows are never returned.
std::vector<TokenId> knn_project(std::span<const float> e_omega, const TensorF& table, std::size_t k,
                                 std::span<const TokenId> exclusions);

struct LmChoice {
  TokenId omega = -1;
  double lm_loss = 0;
};

/// argmin over w in W of lm_loss(x || w || t); ties to the lower id.
LmChoice lm_select(std::span<const TokenId> candidates, const TokenSeq& x, const TokenSeq& t,
                   const models::CausalLMModel& lm);

struct LossGrad {
  double loss = 0;
  TensorF grad;  // [1 x d]
};

/// L_Adv = teacher-forced loss of `y` given the rows e_x || e_omega || e_t,
/// and its gradient with respect to the e_omega row.
LossGrad adversarial_loss_grad(const models::Seq2SeqModel& nmt, const TensorF& e_x, const TensorF& e_omega,
                               const TensorF& e_t, const TokenSeq& y);

/// Gradient projection with LM-guided selection. Deterministic given cfg.seed.
AttackResult attack(const TokenSeq& x, const TokenSeq& t, const models::Seq2SeqModel& nmt,
                    const models::CausalLMModel& lm, const AttackConfig& cfg);

/// First-order baseline: omega <- argmin_w emb(w) . grad. The LM only scores
/// the outcome; it never influences the choice.
AttackResult suffix_dropper(const TokenSeq& x, const TokenSeq& t, const models::Seq2SeqModel& nmt,
                            const models::CausalLMModel& lm, const AttackConfig& cfg);

/// One uniform draw, no optimisation. Uses the same draw as attack() for a
/// given seed.
AttackResult random_control(const TokenSeq& x, const TokenSeq& t, const models::Seq2SeqModel& nmt,
                            const models::CausalLMModel& lm, const AttackConfig& cfg);

}  // namespace obf::attack

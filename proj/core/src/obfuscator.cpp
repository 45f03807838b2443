#include "obf/obfuscator.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <queue>

#include "obf/error.hpp"
#include "obf/metrics.hpp"

namespace obf::attack {

using grad::Tape;
using grad::Var;
using models::CausalLMModel;
using models::Seq2SeqModel;

std::string_view to_string(Optimizer o) { return o == Optimizer::kAdam ? "adam" : "sgd"; }

std::string_view to_string(Method m) {
  switch (m) {
    case Method::kObfuscator:
      return "obfuscator";
    case Method::kSuffixDropper:
      return "suffix_dropper";
    case Method::kRandomControl:
      return "random_control";
  }
  return "obfuscator";
}

Optimizer parse_optimizer(std::string_view text) {
  if (text == "adam") return Optimizer::kAdam;
  if (text == "sgd") return Optimizer::kSgd;
  throw ConfigError("unknown optimizer: " + std::string(text));
}

Method parse_method(std::string_view text) {
  if (text == "obfuscator") return Method::kObfuscator;
  if (text == "suffix_dropper") return Method::kSuffixDropper;
  if (text == "random_control") return Method::kRandomControl;
  throw ConfigError("unknown method: " + std::string(text));
}

void AttackConfig::validate(std::size_t vocab_size) const {
  if (!(gamma > 0)) throw ConfigError("gamma must be > 0");
  if (iterations < 1) throw ConfigError("N must be >= 1");
  std::size_t pool = candidate_pool(vocab_size, exclude_special).size();
  if (k < 1 || k > pool) throw ConfigError("k must be in [1, candidate count]");
  if (beta && !std::isfinite(*beta)) throw ConfigError("beta must be finite when set");
}

std::vector<TokenId> candidate_pool(std::size_t vocab_size, bool exclude_special) {
  std::vector<TokenId> pool;
  for (TokenId id = exclude_special ? kNumSpecials : 0; id < static_cast<TokenId>(vocab_size); ++id) pool.push_back(id);
  return pool;
}

TokenId init_omega(std::span<const TokenId> pool, std::mt19937_64& rng) {
  if (pool.empty()) throw DataError("empty candidate pool");
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  return pool[pick(rng)];
}

TensorF grad_step(const TensorF& e_omega, const TensorF& grad, OptimizerState& state, const AttackConfig& cfg) {
  if (e_omega.size() != grad.size()) throw std::invalid_argument("grad_step: shape mismatch");
  if (!grad.all_finite()) throw NumericError("non-finite gradient");
  TensorF out = e_omega;
  auto e = out.data();
  auto g = grad.data();
  if (cfg.optimizer == Optimizer::kSgd) {
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = static_cast<float>(e[i] - cfg.gamma * g[i]);
    return out;
  }
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  if (state.m.size() != e.size()) {
    state.m.assign(e.size(), 0.0);
    state.v.assign(e.size(), 0.0);
    state.t = 0;
  }
  ++state.t;
  double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < e.size(); ++i) {
    state.m[i] = b1 * state.m[i] + (1 - b1) * g[i];
    state.v[i] = b2 * state.v[i] + (1 - b2) * double(g[i]) * g[i];
    double step = (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + eps);
    e[i] = static_cast<float>(e[i] - cfg.gamma * step);
  }
  return out;
}

std::vector<TokenId> knn_project(std::span<const float> e_omega, const TensorF& table, std::size_t k,
                                 std::span<const TokenId> exclusions) {
  if (e_omega.size() != table.cols()) throw std::invalid_argument("knn_project: dimension mismatch");
  double e_norm = 0;
  for (float v : e_omega) e_norm += double(v) * v;
  e_norm = std::sqrt(e_norm);

  struct Scored {
    double sim;
    TokenId id;
  };
  // Worse-first heap: the top element is the weakest of the kept k.
  auto better = [](const Scored& a, const Scored& b) { return a.sim > b.sim || (a.sim == b.sim && a.id < b.id); };
  std::priority_queue<Scored, std::vector<Scored>, decltype(better)> kept(better);
  std::size_t valid = 0;
  for (std::size_t r = 0; r < table.rows(); ++r) {
    auto id = static_cast<TokenId>(r);
    if (std::find(exclusions.begin(), exclusions.end(), id) != exclusions.end()) continue;
    auto row = table.row(r);
    double dot = 0, norm = 0;
    for (std::size_t c = 0; c < row.size(); ++c) {
      dot += double(row[c]) * e_omega[c];
      norm += double(row[c]) * row[c];
    }
    if (norm == 0 || e_norm == 0) continue;  // similarity -inf
    ++valid;
    Scored s{dot / (std::sqrt(norm) * e_norm), id};
    if (kept.size() < k) {
      kept.push(s);
    } else if (better(s, kept.top())) {
      kept.pop();
      kept.push(s);
    }
  }
  if (valid == 0) throw DataError("knn_project: no candidate has a defined similarity");
  if (valid < k) throw DataError("knn_project: k exceeds the number of valid candidates");
  std::vector<TokenId> out(kept.size());
  for (std::size_t i = out.size(); i-- > 0;) {
    out[i] = kept.top().id;
    kept.pop();
  }
  return out;
}

LmChoice lm_select(std::span<const TokenId> candidates, const TokenSeq& x, const TokenSeq& t,
                   const CausalLMModel& lm) {
  if (candidates.empty()) throw DataError("lm_select: empty candidate set");
  if (x.length() + 1 + t.length() > lm.arch().max_len) throw DataError("sequence too long");
  LmChoice best;
  bool first = true;
  for (TokenId w : candidates) {
    TokenId one[] = {w};
    double loss = models::lm_loss(lm, concat({x.span(), one, t.span()}));
    if (first || loss < best.lm_loss || (loss == best.lm_loss && w < best.omega)) {
      best = {w, loss};
      first = false;
    }
  }
  return best;
}

LossGrad adversarial_loss_grad(const Seq2SeqModel& nmt, const TensorF& e_x, const TensorF& e_omega,
                               const TensorF& e_t, const TokenSeq& y) {
  Tape<float> tape;
  auto params = models::bind_parameters(tape, nmt.params(), false);
  TensorF omega_row({1, e_omega.size()}, std::vector<float>(e_omega.data().begin(), e_omega.data().end()));
  Var omega = tape.leaf(std::move(omega_row), true);
  Var parts[] = {tape.borrow(e_x), omega, tape.borrow(e_t)};
  Var src = tape.concat(parts, 0);
  Var loss = models::nmt_loss_graph(tape, nmt, params, src, y);
  tape.backward(loss);
  return {tape.value(loss).item(), tape.grad(omega)};
}

// ---------------------------------------------------------------------------

namespace {

/// Per-attack memo of everything that depends only on the discrete token.
class CandidateEvaluator {
 public:
  struct Outcome {
    TokenSeq input;
    TokenSeq translation;
    std::size_t distance = 0;
    double adv_loss = 0;
  };

  CandidateEvaluator(const TokenSeq& x, const TokenSeq& t, const TokenSeq& y, const Seq2SeqModel& nmt,
                     const CausalLMModel& lm)
      : x_(x), t_(t), y_(y), nmt_(nmt), lm_(lm) {}

  const Outcome& outcome(TokenId w) {
    auto it = outcomes_.find(w);
    if (it != outcomes_.end()) return it->second;
    Outcome o;
    o.input = with(w);
    TensorF e = models::emb(nmt_, o.input);
    o.translation = models::translate_embedded(nmt_, e);
    o.distance = metrics::levenshtein(o.translation, y_);
    o.adv_loss = models::nmt_loss(nmt_, e, y_);
    return outcomes_.emplace(w, std::move(o)).first->second;
  }

  double lm_loss(TokenId w) {
    auto it = lm_losses_.find(w);
    if (it != lm_losses_.end()) return it->second;
    double v = models::lm_loss(lm_, with(w));
    lm_losses_.emplace(w, v);
    return v;
  }

  /// lm_select over `candidates`, sharing the memo.
  LmChoice select(std::span<const TokenId> candidates) {
    LmChoice best;
    bool first = true;
    for (TokenId w : candidates) {
      double loss = lm_loss(w);
      if (first || loss < best.lm_loss || (loss == best.lm_loss && w < best.omega)) {
        best = {w, loss};
        first = false;
      }
    }
    return best;
  }

  TokenSeq with(TokenId w) const {
    TokenId one[] = {w};
    return concat({x_.span(), one, t_.span()});
  }

 private:
  const TokenSeq& x_;
  const TokenSeq& t_;
  const TokenSeq& y_;
  const Seq2SeqModel& nmt_;
  const CausalLMModel& lm_;
  std::map<TokenId, Outcome> outcomes_;
  std::map<TokenId, double> lm_losses_;
};

void check_inputs(const TokenSeq& x, const TokenSeq& t, const Seq2SeqModel& nmt, const CausalLMModel& lm,
                  const AttackConfig& cfg) {
  if (x.empty()) throw DataError("input sentence is empty");
  if (t.empty()) throw DataError("target sentence is empty");
  std::size_t n = x.length() + 1 + t.length();
  if (n > nmt.arch().max_len) throw DataError("x || omega || t exceeds the translation model's max_len");
  if (n > lm.arch().max_len) throw DataError("sequence too long");
  if (nmt.arch().src_vocab != lm.arch().src_vocab || nmt.arch().src_fingerprint != lm.arch().src_fingerprint) {
    throw DataError("translation model and language model use different source vocabularies");
  }
  cfg.validate(nmt.arch().src_vocab);
}

class Run {
 public:
  Run(Method method, const TokenSeq& x, const TokenSeq& t, const Seq2SeqModel& nmt, const CausalLMModel& lm,
      const AttackConfig& cfg)
      : cfg_(cfg), y_(models::translate(nmt, x)), eval_(x, t, y_, nmt, lm) {
    result_.method = method;
    result_.config = cfg;
    result_.original_translation = y_;
  }

  const TokenSeq& y() const { return y_; }
  CandidateEvaluator& eval() { return eval_; }

  /// Records one checked candidate; true when it satisfies the success test.
  bool check(std::size_t iteration, TokenId w) {
    const auto& o = eval_.outcome(w);
    double lm = eval_.lm_loss(w);
    result_.trace.push_back({iteration, w, o.adv_loss, lm, o.distance});
    result_.iterations_used = iteration;
    if (o.distance < result_.best_attempt.distance) result_.best_attempt = {w, o.distance};
    bool ok = o.distance <= cfg_.alpha && (!cfg_.beta || lm <= *cfg_.beta);
    if (ok) {
      result_.success = true;
      result_.omega = w;
      fill(w);
    }
    return ok;
  }

  AttackResult finish() {
    if (!result_.success) {
      result_.omega.reset();
      if (result_.best_attempt.token >= 0) fill(result_.best_attempt.token);
    }
    return std::move(result_);
  }

  AttackResult& result() { return result_; }

 private:
  void fill(TokenId w) {
    const auto& o = eval_.outcome(w);
    result_.adversarial_input = o.input;
    result_.adversarial_translation = o.translation;
    result_.edit_distance = o.distance;
    result_.lm_loss_value = eval_.lm_loss(w);
  }

  const AttackConfig& cfg_;
  TokenSeq y_;
  CandidateEvaluator eval_;
  AttackResult result_;
};

TensorF table_row(const TensorF& table, TokenId id) {
  auto r = table.row(static_cast<std::size_t>(id));
  return TensorF({1, r.size()}, std::vector<float>(r.begin(), r.end()));
}

}  // namespace

AttackResult attack(const TokenSeq& x, const TokenSeq& t, const Seq2SeqModel& nmt, const CausalLMModel& lm,
                    const AttackConfig& cfg) {
  check_inputs(x, t, nmt, lm, cfg);
  Run run(Method::kObfuscator, x, t, nmt, lm, cfg);

  const TensorF& table = nmt.src_embedding();
  auto pool = candidate_pool(table.rows(), cfg.exclude_special);
  std::vector<TokenId> excluded;
  if (cfg.exclude_special) excluded.assign({kPadId, kBosId, kEosId, kUnkId});

  std::mt19937_64 rng(cfg.seed);
  TensorF e_x = models::emb(nmt, x);
  TensorF e_t = models::emb(nmt, t);
  TensorF e_omega = table_row(table, init_omega(pool, rng));
  OptimizerState opt;

  for (std::size_t itr = 1; itr <= cfg.iterations; ++itr) {
    // Step 1: descend on the continuous embedding (it is never snapped back).
    LossGrad lg = adversarial_loss_grad(nmt, e_x, e_omega, e_t, run.y());
    e_omega = grad_step(e_omega, lg.grad, opt, cfg);
    // Step 2: k nearest tokens by cosine similarity.
    auto candidates = knn_project(e_omega.data(), table, cfg.k, excluded);
    // Step 3: the most fluent candidate under the LM.
    LmChoice choice = run.eval().select(candidates);
    if (run.check(itr, choice.omega)) break;
  }
  return run.finish();
}

AttackResult suffix_dropper(const TokenSeq& x, const TokenSeq& t, const Seq2SeqModel& nmt, const CausalLMModel& lm,
                            const AttackConfig& cfg) {
  check_inputs(x, t, nmt, lm, cfg);
  Run run(Method::kSuffixDropper, x, t, nmt, lm, cfg);

  const TensorF& table = nmt.src_embedding();
  auto pool = candidate_pool(table.rows(), cfg.exclude_special);
  std::mt19937_64 rng(cfg.seed);
  TokenId omega = init_omega(pool, rng);
  TensorF e_x = models::emb(nmt, x);
  TensorF e_t = models::emb(nmt, t);

  for (std::size_t itr = 1; itr <= cfg.iterations; ++itr) {
    LossGrad lg = adversarial_loss_grad(nmt, e_x, table_row(table, omega), e_t, run.y());
    // First-order Taylor: L(e_w) ~ L(e_omega) + (e_w - e_omega) . g, so the
    // best replacement minimises e_w . g.
    TokenId best = -1;
    double best_score = 0;
    for (TokenId w : pool) {
      auto row = table.row(static_cast<std::size_t>(w));
      double score = 0;
      for (std::size_t c = 0; c < row.size(); ++c) score += double(row[c]) * lg.grad[c];
      if (best < 0 || score < best_score) {
        best = w;
        best_score = score;
      }
    }
    bool stuck = best == omega;
    omega = best;
    if (run.check(itr, omega)) break;
    if (stuck) {
      run.result().stagnated = true;
      break;
    }
  }
  return run.finish();
}

AttackResult random_control(const TokenSeq& x, const TokenSeq& t, const Seq2SeqModel& nmt, const CausalLMModel& lm,
                            const AttackConfig& cfg) {
  check_inputs(x, t, nmt, lm, cfg);
  Run run(Method::kRandomControl, x, t, nmt, lm, cfg);
  auto pool = candidate_pool(nmt.src_embedding().rows(), cfg.exclude_special);
  std::mt19937_64 rng(cfg.seed);
  run.check(1, init_omega(pool, rng));
  return run.finish();
}

}  // namespace obf::attack

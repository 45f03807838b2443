#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "obf/error.hpp"
#include "obf/seqmodels.hpp"
#include "transformer_layout.hpp"

namespace obf::models {

using grad::Tape;
using grad::Var;

void TrainConfig::validate() const {
  if (epochs == 0 || batch_size == 0) throw ConfigError("epochs and batch_size must be positive");
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
  if (d_model == 0 || layers == 0 || heads == 0 || ff_dim == 0 || max_len == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (d_model % heads != 0) throw ConfigError("d_model must be divisible by heads");
  if (heldout_fraction < 0 || heldout_fraction >= 1) throw ConfigError("heldout_fraction must be in [0, 1)");
}

std::size_t heldout_begin(std::size_t n, double fraction) {
  auto held = static_cast<std::size_t>(std::llround(static_cast<double>(n) * fraction));
  if (held >= n) held = n > 1 ? n - 1 : 0;
  return n - held;
}

namespace {

class AdamOptimizer {
 public:
  explicit AdamOptimizer(const ParameterSet& params) {
    for (std::size_t i = 0; i < params.count(); ++i) {
      m_.emplace_back(params[i].shape());
      v_.emplace_back(params[i].shape());
    }
  }

  void step(ParameterSet& params, const std::vector<TensorF>& grads, double lr) {
    constexpr double b1 = 0.9, b2 = 0.98, eps = 1e-9;
    ++t_;
    double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t p = 0; p < params.count(); ++p) {
      auto w = params[p].data();
      auto g = grads[p].data();
      auto m = m_[p].data();
      auto v = v_[p].data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = static_cast<float>(b1 * m[i] + (1 - b1) * g[i]);
        v[i] = static_cast<float>(b2 * v[i] + (1 - b2) * double(g[i]) * g[i]);
        double mhat = m[i] / c1;
        double vhat = v[i] / c2;
        w[i] = static_cast<float>(w[i] - lr * mhat / (std::sqrt(vhat) + eps));
      }
    }
  }

 private:
  std::vector<TensorF> m_, v_;
  std::size_t t_ = 0;
};

double scheduled_lr(const TrainConfig& cfg, std::size_t step, std::size_t total_steps) {
  double base = cfg.learning_rate;
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps) {
    return base * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
  }
  // Cosine decay to 10% of the base rate.
  double span = static_cast<double>(std::max<std::size_t>(1, total_steps - std::min(total_steps, cfg.warmup_steps)));
  double progress = std::min(1.0, static_cast<double>(step - std::min(step, cfg.warmup_steps)) / span);
  return base * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(M_PI * progress)));
}

void clip_global_norm(std::vector<TensorF>& grads, double max_norm) {
  if (max_norm <= 0) return;
  double sq = 0;
  for (const auto& g : grads) {
    for (float v : g.data()) sq += double(v) * v;
  }
  double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient during training");
  if (norm <= max_norm) return;
  auto s = static_cast<float>(max_norm / norm);
  for (auto& g : grads) {
    for (auto& v : g.data()) v *= s;
  }
}

/// Shared minibatch loop. `example_loss` records one example's loss on the
/// tape given the bound parameters.
template <typename Model, typename ExampleLoss, typename Evaluate>
std::vector<EpochLog> run_training(Model& model, std::size_t n_train, const TrainConfig& cfg,
                                   const ExampleLoss& example_loss, const Evaluate& evaluate,
                                   const EpochCallback& on_epoch) {
  ParameterSet& params = model.params();
  AdamOptimizer adam(params);
  std::vector<TensorF> grads;
  for (std::size_t p = 0; p < params.count(); ++p) grads.emplace_back(params[p].shape());

  std::mt19937_64 rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t batches_per_epoch = (n_train + cfg.batch_size - 1) / cfg.batch_size;
  std::size_t total_steps = batches_per_epoch * cfg.epochs;
  std::size_t step = 0;
  std::vector<EpochLog> log;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    for (std::size_t start = 0; start < n_train; start += cfg.batch_size) {
      std::size_t end = std::min(n_train, start + cfg.batch_size);
      for (auto& g : grads) std::fill(g.data().begin(), g.data().end(), 0.0f);
      for (std::size_t k = start; k < end; ++k) {
        Tape<float> tape;
        auto vars = bind_parameters(tape, params, true);
        Var loss = example_loss(tape, vars, order[k]);
        loss_sum += tape.value(loss).item();
        tape.backward(loss);
        for (std::size_t p = 0; p < vars.size(); ++p) {
          if (!tape.has_grad(vars[p])) continue;
          auto src = tape.grad(vars[p]).data();
          auto dst = grads[p].data();
          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        }
      }
      float inv = 1.0f / static_cast<float>(end - start);
      for (auto& g : grads) {
        for (auto& v : g.data()) v *= inv;
      }
      clip_global_norm(grads, cfg.clip_norm);
      adam.step(params, grads, scheduled_lr(cfg, step, total_steps));
      ++step;
    }
    if (!params.all_finite()) throw NumericError("training diverged (non-finite parameters)");
    EpochLog entry{epoch, loss_sum / static_cast<double>(n_train), evaluate()};
    if (!std::isfinite(entry.train_loss)) throw NumericError("training diverged (loss is NaN)");
    log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  return log;
}

std::size_t longest(std::span<const TokenSeq> seqs) {
  std::size_t n = 0;
  for (const auto& s : seqs) n = std::max(n, s.length());
  return n;
}

}  // namespace

NmtTrainResult train_nmt(const ParallelCorpus& corpus, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (corpus.pairs.empty()) throw DataError("empty corpus");
  std::size_t max_seen = 0;
  for (const auto& p : corpus.pairs) {
    if (p.source.empty() || p.target.empty()) throw DataError("corpus contains an empty sentence");
    max_seen = std::max({max_seen, p.source.length(), p.target.length()});
  }
  if (cfg.max_len < max_seen + 2) throw ConfigError("max_len must be at least the longest sentence + 2");

  Architecture arch;
  arch.kind = ModelKind::kSeq2Seq;
  arch.src_vocab = static_cast<std::uint32_t>(corpus.source_vocab.size());
  arch.tgt_vocab = static_cast<std::uint32_t>(corpus.target_vocab.size());
  arch.d_model = cfg.d_model;
  arch.layers = cfg.layers;
  arch.heads = cfg.heads;
  arch.ff_dim = cfg.ff_dim;
  arch.max_len = cfg.max_len;
  arch.src_fingerprint = corpus.source_vocab.fingerprint();
  arch.tgt_fingerprint = corpus.target_vocab.fingerprint();
  Seq2SeqModel model(arch, cfg.seed);

  std::size_t split = heldout_begin(corpus.size(), cfg.heldout_fraction);
  std::span<const SentencePair> all(corpus.pairs);
  std::span<const SentencePair> heldout = split < all.size() ? all.subspan(split) : all;

  auto example_loss = [&](Tape<float>& tape, std::span<const Var> vars, std::size_t i) {
    const auto& pair = corpus.pairs[i];
    Var src = tape.gather(vars[0], pair.source.ids);
    return nmt_loss_graph(tape, model, vars, src, pair.target);
  };
  auto evaluate = [&] { return greedy_token_accuracy(model, heldout); };

  auto log = run_training(model, split, cfg, example_loss, evaluate, on_epoch);
  double acc = log.empty() ? 0.0 : log.back().heldout_acc;
  return NmtTrainResult{std::move(model), std::move(log), acc};
}

LmTrainResult train_lm(std::span<const TokenSeq> sentences, const Vocabulary& vocab, const TrainConfig& cfg,
                       const EpochCallback& on_epoch) {
  cfg.validate();
  if (sentences.empty()) throw DataError("empty corpus");
  for (const auto& s : sentences) {
    if (s.empty()) throw DataError("corpus contains an empty sentence");
  }
  if (cfg.max_len < longest(sentences) + 2) throw ConfigError("max_len must be at least the longest sentence + 2");

  Architecture arch;
  arch.kind = ModelKind::kCausalLM;
  arch.src_vocab = static_cast<std::uint32_t>(vocab.size());
  arch.d_model = cfg.d_model;
  arch.layers = cfg.layers;
  arch.heads = cfg.heads;
  arch.ff_dim = cfg.ff_dim;
  arch.max_len = cfg.max_len;
  arch.src_fingerprint = vocab.fingerprint();
  CausalLMModel model(arch, cfg.seed);

  std::size_t split = heldout_begin(sentences.size(), cfg.heldout_fraction);
  std::span<const TokenSeq> heldout = split < sentences.size() ? sentences.subspan(split) : sentences;

  auto example_loss = [&](Tape<float>& tape, std::span<const Var> vars, std::size_t i) {
    return lm_loss_graph(tape, model, vars, sentences[i]);
  };
  auto evaluate = [&] { return next_token_accuracy(model, heldout); };

  auto log = run_training(model, split, cfg, example_loss, evaluate, on_epoch);
  double acc = log.empty() ? 0.0 : log.back().heldout_acc;
  return LmTrainResult{std::move(model), std::move(log), acc};
}

double greedy_token_accuracy(const Seq2SeqModel& model, std::span<const SentencePair> pairs) {
  std::size_t correct = 0, total = 0;
  for (const auto& p : pairs) {
    TokenSeq hyp = translate(model, p.source);
    std::size_t n = std::min(hyp.length(), p.target.length());
    for (std::size_t i = 0; i < n; ++i) correct += hyp[i] == p.target[i] ? 1 : 0;
    total += std::max(hyp.length(), p.target.length());
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

double next_token_accuracy(const CausalLMModel& model, std::span<const TokenSeq> sentences) {
  std::size_t correct = 0, total = 0;
  for (const auto& s : sentences) {
    Tape<float> tape;
    auto vars = bind_parameters(tape, model.params(), false);
    std::vector<TokenId> in{kBosId};
    in.insert(in.end(), s.ids.begin(), s.ids.end() - 1);
    Var hidden = detail::lm_hidden(tape, model, vars, in);
    const auto& logits = tape.value(tape.matmul(hidden, vars[LmLayout(model.arch()).out_proj]));
    for (std::size_t r = 0; r < s.length(); ++r) {
      auto row = logits.row(r);
      auto best = static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin());
      correct += best == s[r] ? 1 : 0;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

void write_train_log(std::span<const EpochLog> log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write training log: " + path.string());
  out << "epoch,train_loss,heldout_acc\n";
  char buf[128];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f\n", e.epoch, e.train_loss, e.heldout_acc);
    out << buf;
  }
}

}  // namespace obf::models

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "obf/tape.hpp"
#include "obf/tensor.hpp"
#include "obf/textkit.hpp"

namespace obf::models {

using grad::TensorF;

enum class ModelKind : std::uint32_t { kSeq2Seq = 1, kCausalLM = 2 };

/// Shape of a model. For a causal LM `tgt_vocab` is 0 and `src_vocab` is the
/// modelled vocabulary.
struct Architecture {
  ModelKind kind = ModelKind::kSeq2Seq;
  std::uint32_t src_vocab = 0;
  std::uint32_t tgt_vocab = 0;
  std::uint32_t d_model = 64;
  std::uint32_t layers = 2;
  std::uint32_t heads = 4;
  std::uint32_t ff_dim = 128;
  std::uint32_t max_len = 64;
  std::uint64_t src_fingerprint = 0;
  std::uint64_t tgt_fingerprint = 0;

  /// Throws ConfigError.
  void validate() const;
  std::uint32_t head_dim() const { return d_model / heads; }

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct NamedTensor {
  std::string name;
  TensorF value;
};

/// Parameters in declaration order; the order is the checkpoint order.
class ParameterSet {
 public:
  std::size_t add(std::string name, TensorF value);

  std::size_t count() const { return entries_.size(); }
  std::size_t scalar_count() const;
  const TensorF& operator[](std::size_t i) const { return entries_[i].value; }
  TensorF& operator[](std::size_t i) { return entries_[i].value; }
  const std::string& name(std::size_t i) const { return entries_[i].name; }
  std::size_t index(std::string_view name) const;
  bool all_finite() const;

  friend bool operator==(const ParameterSet&, const ParameterSet&);

 private:
  std::vector<NamedTensor> entries_;
};

/// Shared storage for the two transformer variants.
class TransformerModel {
 public:
  const Architecture& arch() const { return arch_; }
  const ParameterSet& params() const { return params_; }
  ParameterSet& params() { return params_; }
  /// Sinusoidal position table [max_len x d_model].
  const TensorF& positions() const { return positions_; }

 protected:
  explicit TransformerModel(Architecture arch);

  Architecture arch_;
  ParameterSet params_;
  TensorF positions_;
};

/// Encoder-decoder translator (pre-norm transformer, no linear biases).
class Seq2SeqModel : public TransformerModel {
 public:
  /// Randomly initialised from `seed`.
  Seq2SeqModel(Architecture arch, std::uint64_t seed);
  /// Wraps loaded parameters; shapes are validated against `arch`.
  Seq2SeqModel(Architecture arch, ParameterSet params);

  const TensorF& src_embedding() const { return params_[0]; }
  const TensorF& tgt_embedding() const { return params_[1]; }
};

/// Decoder-only language model used for fluency scoring.
class CausalLMModel : public TransformerModel {
 public:
  CausalLMModel(Architecture arch, std::uint64_t seed);
  CausalLMModel(Architecture arch, ParameterSet params);

  const TensorF& embedding() const { return params_[0]; }
};

// ---------------------------------------------------------------------------
// Graph construction. Parameters are bound onto a tape first (borrowed for
// float tapes, converted copies for double tapes), then the loss graphs are
// recorded on top.

template <typename Real>
std::vector<grad::Var> bind_parameters(grad::Tape<Real>& tape, const ParameterSet& params, bool trainable);

/// Teacher-forced mean cross-entropy of `ref` (BOS-prefixed input,
/// EOS-suffixed targets) given already-embedded source rows.
template <typename Real>
grad::Var nmt_loss_graph(grad::Tape<Real>& tape, const Seq2SeqModel& model, std::span<const grad::Var> params,
                         grad::Var src_embeds, const TokenSeq& ref);

/// Mean over positions of -log p(token_i | BOS, tokens_<i).
template <typename Real>
grad::Var lm_loss_graph(grad::Tape<Real>& tape, const CausalLMModel& model, std::span<const grad::Var> params,
                        const TokenSeq& seq);

// ---------------------------------------------------------------------------
// Operations

/// Embedding-table rows for `seq` ([n x d]); positions are added inside the
/// forward pass. Throws DataError("exceeds max_len").
TensorF emb(const Seq2SeqModel& model, const TokenSeq& seq);

double nmt_loss(const Seq2SeqModel& model, const TensorF& src_embeds, const TokenSeq& ref);

/// Greedy argmax decoding (ties to the lowest id) from BOS until EOS or
/// max_len; BOS/EOS are not returned.
TokenSeq translate(const Seq2SeqModel& model, const TokenSeq& src);
TokenSeq translate_embedded(const Seq2SeqModel& model, const TensorF& src_embeds);

double lm_loss(const CausalLMModel& model, const TokenSeq& seq);

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 2e-3;
  std::uint64_t seed = 7;
  std::uint32_t d_model = 64;
  std::uint32_t layers = 2;
  std::uint32_t heads = 4;
  std::uint32_t ff_dim = 128;
  std::uint32_t max_len = 64;
  double heldout_fraction = 0.1;
  std::size_t warmup_steps = 100;
  double clip_norm = 1.0;

  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0;
  double heldout_acc = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

struct NmtTrainResult {
  Seq2SeqModel model;
  std::vector<EpochLog> log;
  double heldout_accuracy = 0;
};

struct LmTrainResult {
  CausalLMModel model;
  std::vector<EpochLog> log;
  double heldout_accuracy = 0;
};

/// Index where the held-out tail of an n-item corpus begins.
std::size_t heldout_begin(std::size_t n, double fraction);

/// Deterministic given cfg.seed. Throws NumericError on divergence.
NmtTrainResult train_nmt(const ParallelCorpus& corpus, const TrainConfig& cfg, const EpochCallback& on_epoch = {});
LmTrainResult train_lm(std::span<const TokenSeq> sentences, const Vocabulary& vocab, const TrainConfig& cfg,
                       const EpochCallback& on_epoch = {});

/// Micro-averaged position-wise greedy accuracy; the denominator per pair is
/// max(|hyp|, |ref|).
double greedy_token_accuracy(const Seq2SeqModel& model, std::span<const SentencePair> pairs);
/// Teacher-forced next-token argmax accuracy.
double next_token_accuracy(const CausalLMModel& model, std::span<const TokenSeq> sentences);

void write_train_log(std::span<const EpochLog> log, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Checkpoints: "OBFB", u32 version, architecture header, then little-endian
// float32 parameter arrays in declaration order.

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const TransformerModel& model, const std::filesystem::path& path);
Seq2SeqModel load_seq2seq(const std::filesystem::path& path);
CausalLMModel load_causal_lm(const std::filesystem::path& path);
/// Header only.
Architecture read_architecture(const std::filesystem::path& path);

}  // namespace obf::models

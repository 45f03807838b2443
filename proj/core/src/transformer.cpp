#include <cmath>
#include <random>
#include <stdexcept>

#include "obf/error.hpp"
#include "obf/seqmodels.hpp"
#include "transformer_layout.hpp"

namespace obf::models {

using grad::Tape;
using grad::Tensor;
using grad::Var;

void Architecture::validate() const {
  if (kind != ModelKind::kSeq2Seq && kind != ModelKind::kCausalLM) throw ConfigError("unknown model kind");
  if (src_vocab <= static_cast<std::uint32_t>(kNumSpecials)) throw ConfigError("source vocabulary too small");
  if (kind == ModelKind::kSeq2Seq && tgt_vocab <= static_cast<std::uint32_t>(kNumSpecials)) {
    throw ConfigError("target vocabulary too small");
  }
  if (d_model == 0 || layers == 0 || heads == 0 || ff_dim == 0 || max_len < 2) {
    throw ConfigError("architecture dimensions must be positive (max_len >= 2)");
  }
  if (d_model % heads != 0) throw ConfigError("d_model must be divisible by heads");
}

// ---------------------------------------------------------------------------

std::size_t ParameterSet::add(std::string name, TensorF value) {
  entries_.push_back({std::move(name), std::move(value)});
  return entries_.size() - 1;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

std::size_t ParameterSet::index(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  throw std::out_of_range("no parameter named " + std::string(name));
}

bool ParameterSet::all_finite() const {
  for (const auto& e : entries_) {
    if (!e.value.all_finite()) return false;
  }
  return true;
}

bool operator==(const ParameterSet& a, const ParameterSet& b) {
  if (a.entries_.size() != b.entries_.size()) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    if (a.entries_[i].name != b.entries_[i].name || !(a.entries_[i].value == b.entries_[i].value)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Parameter layout

namespace {

class Declarer {
 public:
  Declarer(ParameterSet& out, std::mt19937_64* rng) : out_(out), rng_(rng) {}

  void normal(const std::string& name, std::size_t rows, std::size_t cols, float stddev) {
    TensorF t = TensorF::matrix(rows, cols);
    if (rng_) {
      std::normal_distribution<float> dist(0.0f, stddev);
      for (auto& v : t.data()) v = dist(*rng_);
    }
    out_.add(name, std::move(t));
  }
  void constant(const std::string& name, std::size_t n, float v) {
    out_.add(name, TensorF::filled({n}, rng_ ? v : 0.0f));
  }

 private:
  ParameterSet& out_;
  std::mt19937_64* rng_;
};

void declare_block(Declarer& d, const std::string& prefix, const Architecture& a, bool cross) {
  float s_model = 1.0f / std::sqrt(static_cast<float>(a.d_model));
  float s_ff = 1.0f / std::sqrt(static_cast<float>(a.ff_dim));
  d.constant(prefix + "ln1.gain", a.d_model, 1.0f);
  d.constant(prefix + "ln1.bias", a.d_model, 0.0f);
  for (const char* w : {"self.wq", "self.wk", "self.wv", "self.wo"}) d.normal(prefix + w, a.d_model, a.d_model, s_model);
  d.constant(prefix + "ln2.gain", a.d_model, 1.0f);
  d.constant(prefix + "ln2.bias", a.d_model, 0.0f);
  if (cross) {
    for (const char* w : {"cross.wq", "cross.wk", "cross.wv", "cross.wo"}) {
      d.normal(prefix + w, a.d_model, a.d_model, s_model);
    }
    d.constant(prefix + "ln3.gain", a.d_model, 1.0f);
    d.constant(prefix + "ln3.bias", a.d_model, 0.0f);
  }
  d.normal(prefix + "ff.w1", a.d_model, a.ff_dim, s_model);
  d.normal(prefix + "ff.w2", a.ff_dim, a.d_model, s_ff);
}

constexpr float kOutputInitStd = 0.02f;

void declare_seq2seq(ParameterSet& out, const Architecture& a, std::mt19937_64* rng) {
  Declarer d(out, rng);
  d.normal("src_embedding", a.src_vocab, a.d_model, 1.0f);
  d.normal("tgt_embedding", a.tgt_vocab, a.d_model, 1.0f);
  for (std::uint32_t l = 0; l < a.layers; ++l) declare_block(d, "enc." + std::to_string(l) + ".", a, false);
  d.constant("enc.ln.gain", a.d_model, 1.0f);
  d.constant("enc.ln.bias", a.d_model, 0.0f);
  for (std::uint32_t l = 0; l < a.layers; ++l) declare_block(d, "dec." + std::to_string(l) + ".", a, true);
  d.constant("dec.ln.gain", a.d_model, 1.0f);
  d.constant("dec.ln.bias", a.d_model, 0.0f);
  d.normal("out_proj", a.d_model, a.tgt_vocab, kOutputInitStd);
}

void declare_lm(ParameterSet& out, const Architecture& a, std::mt19937_64* rng) {
  Declarer d(out, rng);
  d.normal("embedding", a.src_vocab, a.d_model, 1.0f);
  for (std::uint32_t l = 0; l < a.layers; ++l) declare_block(d, "dec." + std::to_string(l) + ".", a, false);
  d.constant("dec.ln.gain", a.d_model, 1.0f);
  d.constant("dec.ln.bias", a.d_model, 0.0f);
  d.normal("out_proj", a.d_model, a.src_vocab, kOutputInitStd);
}

void check_layout(const ParameterSet& expected, const ParameterSet& got) {
  if (expected.count() != got.count()) throw DataError("parameter count does not match architecture");
  for (std::size_t i = 0; i < expected.count(); ++i) {
    if (expected[i].shape() != got[i].shape()) {
      throw DataError("parameter " + expected.name(i) + " has the wrong shape");
    }
  }
}

// Geometric frequencies from pi down to pi/10000; the fastest pair is
// (0, (-1)^pos), which exposes position parity directly.
TensorF sinusoidal_positions(std::uint32_t max_len, std::uint32_t d) {
  TensorF pe = TensorF::matrix(max_len, d);
  for (std::uint32_t pos = 0; pos < max_len; ++pos) {
    for (std::uint32_t i = 0; i < d; i += 2) {
      double freq = M_PI * std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
      pe.at(pos, i) = static_cast<float>(std::sin(pos * freq));
      if (i + 1 < d) pe.at(pos, i + 1) = static_cast<float>(std::cos(pos * freq));
    }
  }
  return pe;
}

}  // namespace

TransformerModel::TransformerModel(Architecture arch) : arch_(arch) {
  arch_.validate();
  positions_ = sinusoidal_positions(arch_.max_len, arch_.d_model);
}

Seq2SeqModel::Seq2SeqModel(Architecture arch, std::uint64_t seed) : TransformerModel(arch) {
  if (arch_.kind != ModelKind::kSeq2Seq) throw ConfigError("architecture is not a seq2seq model");
  std::mt19937_64 rng(seed);
  declare_seq2seq(params_, arch_, &rng);
}

Seq2SeqModel::Seq2SeqModel(Architecture arch, ParameterSet params) : TransformerModel(arch) {
  if (arch_.kind != ModelKind::kSeq2Seq) throw DataError("checkpoint is not a seq2seq model");
  ParameterSet expected;
  declare_seq2seq(expected, arch_, nullptr);
  check_layout(expected, params);
  params_ = std::move(params);
}

CausalLMModel::CausalLMModel(Architecture arch, std::uint64_t seed) : TransformerModel(arch) {
  if (arch_.kind != ModelKind::kCausalLM) throw ConfigError("architecture is not a causal LM");
  std::mt19937_64 rng(seed);
  declare_lm(params_, arch_, &rng);
}

CausalLMModel::CausalLMModel(Architecture arch, ParameterSet params) : TransformerModel(arch) {
  if (arch_.kind != ModelKind::kCausalLM) throw DataError("checkpoint is not a causal LM");
  ParameterSet expected;
  declare_lm(expected, arch_, nullptr);
  check_layout(expected, params);
  params_ = std::move(params);
}

// ---------------------------------------------------------------------------
// Graph construction

template <typename Real>
std::vector<Var> bind_parameters(Tape<Real>& tape, const ParameterSet& params, bool trainable) {
  std::vector<Var> vars;
  vars.reserve(params.count());
  for (std::size_t i = 0; i < params.count(); ++i) {
    if constexpr (std::is_same_v<Real, float>) {
      vars.push_back(tape.borrow(params[i], trainable));
    } else {
      vars.push_back(tape.leaf(params[i].template cast<Real>(), trainable));
    }
  }
  return vars;
}

namespace detail {

template <typename Real>
Var position_rows(Tape<Real>& tape, const TransformerModel& model, std::size_t n) {
  const TensorF& pe = model.positions();
  Tensor<Real> rows = Tensor<Real>::matrix(n, pe.cols());
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < pe.cols(); ++c) rows.at(r, c) = static_cast<Real>(pe.at(r, c));
  }
  return tape.leaf(std::move(rows));
}

template <typename Real>
Var causal_mask(Tape<Real>& tape, std::size_t n) {
  Tensor<Real> mask = Tensor<Real>::matrix(n, n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = r + 1; c < n; ++c) mask.at(r, c) = Real(-1e9);
  }
  return tape.leaf(std::move(mask));
}

template <typename Real>
Var attention(Tape<Real>& tape, const Architecture& a, Var xq, Var xkv, std::span<const Var> w, Var mask) {
  Var q = tape.matmul(xq, w[0]);
  Var k = tape.matmul(xkv, w[1]);
  Var v = tape.matmul(xkv, w[2]);
  std::size_t dh = a.head_dim();
  Real inv_sqrt = Real(1) / std::sqrt(static_cast<Real>(dh));
  std::vector<Var> heads;
  heads.reserve(a.heads);
  for (std::size_t h = 0; h < a.heads; ++h) {
    Var qh = tape.slice(q, 1, h * dh, (h + 1) * dh);
    Var kh = tape.slice(k, 1, h * dh, (h + 1) * dh);
    Var vh = tape.slice(v, 1, h * dh, (h + 1) * dh);
    Var scores = tape.scale(tape.matmul(qh, kh, false, true), inv_sqrt);
    if (mask.valid()) scores = tape.add(scores, mask);
    heads.push_back(tape.matmul(tape.softmax(scores), vh));
  }
  Var merged = a.heads == 1 ? heads[0] : tape.concat(heads, 1);
  return tape.matmul(merged, w[3]);
}

template <typename Real>
Var feed_forward(Tape<Real>& tape, Var x, Var w1, Var w2) {
  return tape.matmul(tape.gelu(tape.matmul(x, w1)), w2);
}

/// Self-attention block (+ optional cross-attention) with pre-norm residuals.
template <typename Real>
Var block(Tape<Real>& tape, const Architecture& a, std::span<const Var> p, Var x, Var mask, Var memory) {
  const BlockLayout& L = memory.valid() ? kDecoderBlock : kEncoderBlock;
  Var h = tape.layer_norm(x, p[L.ln1_gain], p[L.ln1_bias]);
  x = tape.add(x, attention(tape, a, h, h, p.subspan(L.self_wq, 4), mask));
  h = tape.layer_norm(x, p[L.ln2_gain], p[L.ln2_bias]);
  if (memory.valid()) {
    x = tape.add(x, attention(tape, a, h, memory, p.subspan(L.cross_wq, 4), Var{}));
    h = tape.layer_norm(x, p[L.ln3_gain], p[L.ln3_bias]);
  }
  return tape.add(x, feed_forward(tape, h, p[L.ff_w1], p[L.ff_w2]));
}

template <typename Real>
Var encode(Tape<Real>& tape, const Seq2SeqModel& model, std::span<const Var> p, Var src_embeds) {
  const Architecture& a = model.arch();
  Seq2SeqLayout layout(a);
  std::size_t n = tape.value(src_embeds).rows();
  Var x = tape.add(src_embeds, position_rows(tape, model, n));
  for (std::size_t l = 0; l < a.layers; ++l) x = block(tape, a, p.subspan(layout.encoder_block(l), kEncoderBlock.size), x, Var{}, Var{});
  return tape.layer_norm(x, p[layout.enc_ln_gain], p[layout.enc_ln_bias]);
}

template <typename Real>
Var decode_hidden(Tape<Real>& tape, const Seq2SeqModel& model, std::span<const Var> p, Var memory,
                  std::span<const TokenId> dec_in) {
  const Architecture& a = model.arch();
  Seq2SeqLayout layout(a);
  std::size_t n = dec_in.size();
  Var x = tape.add(tape.gather(p[layout.tgt_embedding], dec_in), position_rows(tape, model, n));
  Var mask = causal_mask(tape, n);
  for (std::size_t l = 0; l < a.layers; ++l) {
    x = block(tape, a, p.subspan(layout.decoder_block(l), kDecoderBlock.size), x, mask, memory);
  }
  return tape.layer_norm(x, p[layout.dec_ln_gain], p[layout.dec_ln_bias]);
}

template <typename Real>
Var lm_hidden(Tape<Real>& tape, const CausalLMModel& model, std::span<const Var> p, std::span<const TokenId> in) {
  const Architecture& a = model.arch();
  LmLayout layout(a);
  std::size_t n = in.size();
  Var x = tape.add(tape.gather(p[layout.embedding], in), position_rows(tape, model, n));
  Var mask = causal_mask(tape, n);
  for (std::size_t l = 0; l < a.layers; ++l) x = block(tape, a, p.subspan(layout.block(l), kEncoderBlock.size), x, mask, Var{});
  return tape.layer_norm(x, p[layout.ln_gain], p[layout.ln_bias]);
}

template Var encode(Tape<float>&, const Seq2SeqModel&, std::span<const Var>, Var);
template Var decode_hidden(Tape<float>&, const Seq2SeqModel&, std::span<const Var>, Var, std::span<const TokenId>);
template Var lm_hidden(Tape<float>&, const CausalLMModel&, std::span<const Var>, std::span<const TokenId>);

}  // namespace detail

template <typename Real>
Var nmt_loss_graph(Tape<Real>& tape, const Seq2SeqModel& model, std::span<const Var> params, Var src_embeds,
                   const TokenSeq& ref) {
  const Architecture& a = model.arch();
  std::size_t n = tape.value(src_embeds).rows();
  if (n == 0) throw DataError("source sequence is empty");
  if (n > a.max_len) throw DataError("source exceeds max_len");
  if (ref.length() + 1 > a.max_len) throw DataError("reference exceeds max_len");
  if (tape.value(src_embeds).cols() != a.d_model) throw std::invalid_argument("source embeddings have wrong width");

  std::vector<TokenId> dec_in{kBosId};
  dec_in.insert(dec_in.end(), ref.ids.begin(), ref.ids.end());
  std::vector<TokenId> targets(ref.ids.begin(), ref.ids.end());
  targets.push_back(kEosId);

  Seq2SeqLayout layout(a);
  Var memory = detail::encode(tape, model, params, src_embeds);
  Var hidden = detail::decode_hidden(tape, model, params, memory, dec_in);
  Var logits = tape.matmul(hidden, params[layout.out_proj]);
  return tape.cross_entropy(logits, targets, kPadId);
}

template <typename Real>
Var lm_loss_graph(Tape<Real>& tape, const CausalLMModel& model, std::span<const Var> params, const TokenSeq& seq) {
  const Architecture& a = model.arch();
  if (seq.empty()) throw DataError("lm_loss of an empty sequence");
  if (seq.length() > a.max_len) throw DataError("sequence too long");
  std::vector<TokenId> in{kBosId};
  in.insert(in.end(), seq.ids.begin(), seq.ids.end() - 1);
  LmLayout layout(a);
  Var hidden = detail::lm_hidden(tape, model, params, in);
  Var logits = tape.matmul(hidden, params[layout.out_proj]);
  return tape.cross_entropy(logits, seq.ids, kPadId);
}

template std::vector<Var> bind_parameters(Tape<float>&, const ParameterSet&, bool);
template std::vector<Var> bind_parameters(Tape<double>&, const ParameterSet&, bool);
template Var nmt_loss_graph(Tape<float>&, const Seq2SeqModel&, std::span<const Var>, Var, const TokenSeq&);
template Var nmt_loss_graph(Tape<double>&, const Seq2SeqModel&, std::span<const Var>, Var, const TokenSeq&);
template Var lm_loss_graph(Tape<float>&, const CausalLMModel&, std::span<const Var>, const TokenSeq&);
template Var lm_loss_graph(Tape<double>&, const CausalLMModel&, std::span<const Var>, const TokenSeq&);

}  // namespace obf::models

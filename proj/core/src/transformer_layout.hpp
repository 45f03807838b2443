#pragma once

#include <cstddef>

#include "obf/seqmodels.hpp"

namespace obf::models {

// Offsets of parameters inside one transformer block, matching the
// declaration order used at initialisation and in checkpoints.
struct BlockLayout {
  std::size_t size;
  std::size_t ln1_gain, ln1_bias;
  std::size_t self_wq;  // wq, wk, wv, wo follow contiguously
  std::size_t ln2_gain, ln2_bias;
  std::size_t cross_wq;
  std::size_t ln3_gain, ln3_bias;
  std::size_t ff_w1, ff_w2;
};

inline constexpr BlockLayout kEncoderBlock{10, 0, 1, 2, 6, 7, 0, 0, 0, 8, 9};
inline constexpr BlockLayout kDecoderBlock{16, 0, 1, 2, 6, 7, 8, 12, 13, 14, 15};

struct Seq2SeqLayout {
  explicit Seq2SeqLayout(const Architecture& a)
      : layers(a.layers),
        enc_ln_gain(2 + kEncoderBlock.size * layers),
        enc_ln_bias(enc_ln_gain + 1),
        dec_ln_gain(enc_ln_gain + 2 + kDecoderBlock.size * layers),
        dec_ln_bias(dec_ln_gain + 1),
        out_proj(dec_ln_gain + 2) {}

  std::size_t encoder_block(std::size_t l) const { return 2 + kEncoderBlock.size * l; }
  std::size_t decoder_block(std::size_t l) const { return enc_ln_gain + 2 + kDecoderBlock.size * l; }

  static constexpr std::size_t src_embedding = 0;
  static constexpr std::size_t tgt_embedding = 1;
  std::size_t layers;
  std::size_t enc_ln_gain, enc_ln_bias;
  std::size_t dec_ln_gain, dec_ln_bias;
  std::size_t out_proj;
};

struct LmLayout {
  explicit LmLayout(const Architecture& a)
      : layers(a.layers), ln_gain(1 + kEncoderBlock.size * layers), ln_bias(ln_gain + 1), out_proj(ln_gain + 2) {}

  std::size_t block(std::size_t l) const { return 1 + kEncoderBlock.size * l; }

  static constexpr std::size_t embedding = 0;
  std::size_t layers;
  std::size_t ln_gain, ln_bias;
  std::size_t out_proj;
};

namespace detail {

template <typename Real>
grad::Var encode(grad::Tape<Real>& tape, const Seq2SeqModel& model, std::span<const grad::Var> p,
                 grad::Var src_embeds);
template <typename Real>
grad::Var decode_hidden(grad::Tape<Real>& tape, const Seq2SeqModel& model, std::span<const grad::Var> p,
                        grad::Var memory, std::span<const TokenId> dec_in);
template <typename Real>
grad::Var lm_hidden(grad::Tape<Real>& tape, const CausalLMModel& model, std::span<const grad::Var> p,
                    std::span<const TokenId> in);

}  // namespace detail

}  // namespace obf::models

#include "obf/seqmodels.hpp"

#include <algorithm>

#include "obf/error.hpp"
#include "transformer_layout.hpp"

namespace obf::models {

using grad::Tape;
using grad::Var;

TensorF emb(const Seq2SeqModel& model, const TokenSeq& seq) {
  if (seq.length() > model.arch().max_len) throw DataError("sequence exceeds max_len");
  const TensorF& table = model.src_embedding();
  TensorF out = TensorF::matrix(seq.length(), table.cols());
  for (std::size_t i = 0; i < seq.length(); ++i) {
    TokenId id = seq[i];
    if (id < 0 || static_cast<std::size_t>(id) >= table.rows()) throw DataError("id out of range");
    auto src = table.row(static_cast<std::size_t>(id));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

double nmt_loss(const Seq2SeqModel& model, const TensorF& src_embeds, const TokenSeq& ref) {
  if (ref.empty()) throw DataError("reference is empty");
  Tape<float> tape;
  auto params = bind_parameters(tape, model.params(), false);
  Var src = tape.borrow(src_embeds);
  return tape.value(nmt_loss_graph(tape, model, params, src, ref)).item();
}

namespace {

TokenId argmax_lowest(std::span<const float> row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i) {
    if (row[i] > row[best]) best = i;
  }
  return static_cast<TokenId>(best);
}

}  // namespace

TokenSeq translate_embedded(const Seq2SeqModel& model, const TensorF& src_embeds) {
  const Architecture& a = model.arch();
  if (src_embeds.rows() > a.max_len) throw DataError("source exceeds max_len");
  if (src_embeds.rows() == 0) return {};

  TensorF memory;
  {
    Tape<float> tape;
    auto params = bind_parameters(tape, model.params(), false);
    memory = tape.value(detail::encode(tape, model, params, tape.borrow(src_embeds)));
  }

  Seq2SeqLayout layout(a);
  std::vector<TokenId> dec_in{kBosId};
  while (dec_in.size() < a.max_len) {
    Tape<float> tape;
    auto params = bind_parameters(tape, model.params(), false);
    Var hidden = detail::decode_hidden(tape, model, params, tape.borrow(memory), dec_in);
    Var last = tape.slice(hidden, 0, dec_in.size() - 1, dec_in.size());
    Var logits = tape.matmul(last, params[layout.out_proj]);
    TokenId next = argmax_lowest(tape.value(logits).row(0));
    if (next == kEosId) break;
    dec_in.push_back(next);
  }
  return TokenSeq(std::vector<TokenId>(dec_in.begin() + 1, dec_in.end()));
}

TokenSeq translate(const Seq2SeqModel& model, const TokenSeq& src) {
  return translate_embedded(model, emb(model, src));
}

double lm_loss(const CausalLMModel& model, const TokenSeq& seq) {
  Tape<float> tape;
  auto params = bind_parameters(tape, model.params(), false);
  return tape.value(lm_loss_graph(tape, model, params, seq)).item();
}

}  // namespace obf::models

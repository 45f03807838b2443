#include <benchmark/benchmark.h>

#include <random>

#include "obf/metrics.hpp"
#include "obf/obfuscator.hpp"
#include "obf/seqmodels.hpp"
#include "obf/tape.hpp"

namespace {

using namespace obf;
using grad::TensorF;

TensorF random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.f, 1.f);
  TensorF t = TensorF::matrix(rows, cols);
  for (auto& v : t.data()) v = n(rng);
  return t;
}

TokenSeq random_tokens(std::size_t n, TokenId vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<TokenId> tok(kNumSpecials, vocab - 1);
  TokenSeq s;
  for (std::size_t i = 0; i < n; ++i) s.ids.push_back(tok(rng));
  return s;
}

models::Architecture arch(models::ModelKind kind, std::uint32_t vocab) {
  models::Architecture a;
  a.kind = kind;
  a.src_vocab = vocab;
  a.tgt_vocab = kind == models::ModelKind::kSeq2Seq ? vocab : 0;
  return a;  // d=64, 2 layers, 4 heads: the A1 shape
}

void BM_MatmulForwardBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  TensorF a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  for (auto _ : state) {
    grad::Tape<float> tape;
    grad::Var va = tape.leaf(a, true), vb = tape.leaf(b, true);
    tape.backward(grad::sum(tape, tape.matmul(va, vb)));
    benchmark::DoNotOptimize(tape.grad(va).raw());
  }
  state.SetItemsProcessed(state.iterations() * 3 * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_MatmulForwardBackward)->Arg(16)->Arg(64)->Arg(256);

void BM_Translate(benchmark::State& state) {
  models::Seq2SeqModel nmt(arch(models::ModelKind::kSeq2Seq, 68), 3);
  TokenSeq src = random_tokens(static_cast<std::size_t>(state.range(0)), 68, 4);
  for (auto _ : state) benchmark::DoNotOptimize(models::translate(nmt, src));
}
BENCHMARK(BM_Translate)->Arg(8)->Arg(20);

void BM_AdversarialGradient(benchmark::State& state) {
  models::Seq2SeqModel nmt(arch(models::ModelKind::kSeq2Seq, 68), 5);
  TokenSeq x = random_tokens(12, 68, 6), t = random_tokens(6, 68, 7), y = random_tokens(12, 68, 8);
  TensorF e_x = models::emb(nmt, x), e_t = models::emb(nmt, t);
  TensorF omega = random_matrix(1, 64, 9);
  for (auto _ : state) benchmark::DoNotOptimize(attack::adversarial_loss_grad(nmt, e_x, omega, e_t, y));
}
BENCHMARK(BM_AdversarialGradient);

void BM_KnnProject(benchmark::State& state) {
  TensorF table = random_matrix(static_cast<std::size_t>(state.range(0)), 64, 10);
  TensorF q = random_matrix(1, 64, 11);
  std::vector<TokenId> excl{0, 1, 2, 3};
  for (auto _ : state) benchmark::DoNotOptimize(attack::knn_project(q.data(), table, 20, excl));
}
BENCHMARK(BM_KnnProject)->Arg(64)->Arg(512)->Arg(8192);

void BM_LmSelect(benchmark::State& state) {
  models::CausalLMModel lm(arch(models::ModelKind::kCausalLM, 68), 12);
  TokenSeq x = random_tokens(12, 68, 13), t = random_tokens(6, 68, 14);
  std::vector<TokenId> candidates;
  for (TokenId id = 4; id < 24; ++id) candidates.push_back(id);
  for (auto _ : state) benchmark::DoNotOptimize(attack::lm_select(candidates, x, t, lm));
}
BENCHMARK(BM_LmSelect);

void BM_Levenshtein(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  TokenSeq a = random_tokens(n, 40, 15), b = random_tokens(n, 40, 16);
  for (auto _ : state) benchmark::DoNotOptimize(metrics::levenshtein(a, b));
}
BENCHMARK(BM_Levenshtein)->Arg(20)->Arg(200);

void BM_Bleu(benchmark::State& state) {
  TokenSeq a = random_tokens(30, 12, 17), b = random_tokens(30, 12, 18);
  for (auto _ : state) benchmark::DoNotOptimize(metrics::bleu(a, b));
}
BENCHMARK(BM_Bleu);

}  // namespace

BENCHMARK_MAIN();

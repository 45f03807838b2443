#pragma once

// Reference implementations used only by tests. Each one is written the slow,
// obvious way and shares no code with the library routine it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include "obf/seqmodels.hpp"
#include "obf/tensor.hpp"
#include "obf/textkit.hpp"

namespace obf::testing {

using grad::TensorD;
using grad::TensorF;

inline TensorD random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng, double scale = 1.0) {
  TensorD t(std::move(shape));
  std::normal_distribution<double> n(0.0, scale);
  for (auto& v : t.data()) v = n(rng);
  return t;
}

inline TensorD naive_matmul(const TensorD& a, const TensorD& b) {
  TensorD out = TensorD::matrix(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a.at(i, k) * b.at(k, j);
      out.at(i, j) = s;
    }
  }
  return out;
}

/// max_i |a_i - b_i| / max_j |b_j|, guarded against an all-zero reference.
template <typename A, typename B>
double max_relative_error(std::span<const A> analytic, std::span<const B> reference) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    num = std::max(num, std::abs(static_cast<double>(analytic[i]) - static_cast<double>(reference[i])));
    den = std::max(den, std::abs(static_cast<double>(reference[i])));
  }
  return den < 1e-12 ? num : num / den;
}

/// Central differences of f at x, perturbing every element in turn.
inline std::vector<double> central_difference(const std::function<double(const TensorD&)>& f, TensorD x, double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double keep = x[i];
    x[i] = keep + h;
    double up = f(x);
    x[i] = keep - h;
    double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

/// Textbook recursive edit distance with memoisation.
inline std::size_t levenshtein_memo(const std::vector<TokenId>& a, const std::vector<TokenId>& b) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  std::function<std::size_t(std::size_t, std::size_t)> d = [&](std::size_t i, std::size_t j) -> std::size_t {
    if (i == 0) return j;
    if (j == 0) return i;
    auto key = std::make_pair(i, j);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    std::size_t best = std::min(d(i - 1, j) + 1, d(i, j - 1) + 1);
    best = std::min(best, d(i - 1, j - 1) + (a[i - 1] == b[j - 1] ? 0 : 1));
    return memo[key] = best;
  };
  return d(a.size(), b.size());
}

/// Full scan: score every allowed row, sort by (similarity desc, id asc).
inline std::vector<TokenId> brute_force_topk(std::span<const float> q, const TensorF& table, std::size_t k,
                                             const std::set<TokenId>& excluded) {
  std::vector<std::pair<double, TokenId>> scored;
  double qn = 0;
  for (float v : q) qn += double(v) * v;
  for (std::size_t r = 0; r < table.rows(); ++r) {
    auto id = static_cast<TokenId>(r);
    if (excluded.count(id)) continue;
    double dot = 0, rn = 0;
    for (std::size_t c = 0; c < q.size(); ++c) {
      dot += double(table.at(r, c)) * q[c];
      rn += double(table.at(r, c)) * table.at(r, c);
    }
    if (rn == 0 || qn == 0) continue;
    scored.emplace_back(dot / std::sqrt(rn * qn), id);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
    return x.first != y.first ? x.first > y.first : x.second < y.second;
  });
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < k && i < scored.size(); ++i) out.push_back(scored[i].second);
  return out;
}

inline models::Architecture tiny_arch(models::ModelKind kind, std::uint32_t vocab, std::uint32_t d = 16,
                                      std::uint32_t layers = 1, std::uint32_t heads = 2, std::uint32_t ff = 32,
                                      std::uint32_t max_len = 32) {
  models::Architecture a;
  a.kind = kind;
  a.src_vocab = vocab;
  a.tgt_vocab = vocab;
  a.d_model = d;
  a.layers = layers;
  a.heads = heads;
  a.ff_dim = ff;
  a.max_len = max_len;
  return a;
}

/// Small trained models shared by the tests of one process.
struct TrainedToy {
  ParallelCorpus corpus;
  models::Seq2SeqModel nmt;
  models::CausalLMModel lm;
  double nmt_heldout_accuracy;
};

const TrainedToy& trained_toy();

}  // namespace obf::testing

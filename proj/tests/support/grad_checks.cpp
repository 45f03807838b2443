#include "grad_checks.hpp"

#include <functional>
#include <random>
#include <utility>

#include "obf/obfuscator.hpp"
#include "obf/tape.hpp"
#include "oracles.hpp"

namespace obf::testing {

namespace {

using grad::Tape;
using grad::Var;

using BuildD = std::function<Var(Tape<double>&, std::vector<Var>&)>;
using BuildF = std::function<Var(Tape<float>&, std::vector<Var>&)>;

// Reduces any output to a scalar through a fixed random bilinear form
// l * out * r, so every output element carries a distinct weight.
template <typename Real>
Var reduce(Tape<Real>& tape, Var out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t rows = tape.value(out).rows(), cols = tape.value(out).cols();
  Var l = tape.leaf(random_tensor({1, rows}, rng).template cast<Real>());
  Var r = tape.leaf(random_tensor({cols, 1}, rng).template cast<Real>());
  return tape.matmul(tape.matmul(l, out), r);
}

double forward64(const BuildD& build, const std::vector<TensorD>& inputs, std::uint64_t seed) {
  Tape<double> tape;
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(tape.leaf(x, true));
  return tape.value(reduce(tape, build(tape, vars), seed)).item();
}

GradCheck check(std::string name, const BuildD& build64, const BuildF& build32, const std::vector<TensorD>& inputs,
                std::uint64_t seed) {
  GradCheck res{std::move(name)};
  Tape<double> t64;
  std::vector<Var> v64;
  for (const auto& x : inputs) v64.push_back(t64.leaf(x, true));
  t64.backward(reduce(t64, build64(t64, v64), seed));

  Tape<float> t32;
  std::vector<Var> v32;
  for (const auto& x : inputs) v32.push_back(t32.leaf(x.cast<float>(), true));
  t32.backward(reduce(t32, build32(t32, v32), seed));

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto f = [&](const TensorD& xi) {
      auto in = inputs;
      in[i] = xi;
      return forward64(build64, in, seed);
    };
    auto fd = central_difference(f, inputs[i], 1e-5);
    res.err64 = std::max(res.err64, max_relative_error(t64.grad(v64[i]).data(), std::span<const double>(fd)));
    auto fd_wide = central_difference(f, inputs[i], 1e-3);
    res.err32 = std::max(res.err32, max_relative_error(t32.grad(v32[i]).data(), std::span<const double>(fd_wide)));
  }
  return res;
}

#define OBF_BOTH(body)                                                       \
  BuildD([&](Tape<double>& t, std::vector<Var>& v) { return body; }),        \
      BuildF([&](Tape<float>& t, std::vector<Var>& v) { return body; })

}  // namespace

std::vector<GradCheck> primitive_gradient_checks(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto R = [&](std::size_t r, std::size_t c, double s = 1.0) { return random_tensor({r, c}, rng, s); };
  std::vector<TokenId> ids{3, 0, 3, 5};
  std::vector<TokenId> targets{4, kPadId, 7, 5};
  std::uint64_t s = seed * 31 + 7;

  std::vector<GradCheck> out;
  for (int trial = 0; trial < 3; ++trial) {
    out.push_back(check("matmul", OBF_BOTH(t.matmul(v[0], v[1])), {R(3, 4), R(4, 5)}, s++));
    out.push_back(check("matmul_ta", OBF_BOTH(t.matmul(v[0], v[1], true, false)), {R(4, 3), R(4, 2)}, s++));
    out.push_back(check("matmul_tb", OBF_BOTH(t.matmul(v[0], v[1], false, true)), {R(2, 4), R(5, 4)}, s++));
    out.push_back(check("matmul_tab", OBF_BOTH(t.matmul(v[0], v[1], true, true)), {R(4, 2), R(3, 4)}, s++));
    out.push_back(check("add", OBF_BOTH(t.add(v[0], v[1])), {R(3, 4), R(3, 4)}, s++));
    out.push_back(check("add_scalar", OBF_BOTH(t.add(v[0], v[1])), {R(3, 4), R(1, 1)}, s++));
    out.push_back(check("scale", OBF_BOTH(t.scale(v[0], -1.75)), {R(2, 5)}, s++));
    out.push_back(check("tanh", OBF_BOTH(t.tanh(v[0])), {R(3, 4)}, s++));
    out.push_back(check("gelu", OBF_BOTH(t.gelu(v[0])), {R(3, 4, 2.0)}, s++));
    out.push_back(check("softmax", OBF_BOTH(t.softmax(v[0])), {R(3, 6)}, s++));
    out.push_back(check("layer_norm", OBF_BOTH(t.layer_norm(v[0], v[1], v[2])), {R(3, 6), R(1, 6), R(1, 6)}, s++));
    out.push_back(check("gather", OBF_BOTH(t.gather(v[0], ids)), {R(7, 4)}, s++));
    out.push_back(check("cross_entropy", OBF_BOTH(t.cross_entropy(v[0], targets)), {R(4, 8, 2.0)}, s++));
    out.push_back(check("concat_rows", OBF_BOTH((t.concat(std::vector<Var>{v[0], v[1]}, 0))), {R(2, 3), R(4, 3)}, s++));
    out.push_back(check("concat_cols", OBF_BOTH((t.concat(std::vector<Var>{v[0], v[1]}, 1))), {R(2, 3), R(2, 5)}, s++));
    out.push_back(check("slice_rows", OBF_BOTH(t.slice(v[0], 0, 1, 3)), {R(4, 3)}, s++));
    out.push_back(check("slice_cols", OBF_BOTH(t.slice(v[0], 1, 2, 5)), {R(2, 5)}, s++));
    out.push_back(check("sum", OBF_BOTH(grad::sum(t, t.tanh(v[0]))), {R(3, 3)}, s++));
    out.push_back(check("dot", OBF_BOTH(grad::dot(t, v[0], t.gelu(v[1]))), {R(1, 6), R(1, 6)}, s++));
  }
  return out;
}

double adversarial_gradient_error(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto pick = [&](std::vector<std::uint32_t> options) {
    return options[std::uniform_int_distribution<std::size_t>(0, options.size() - 1)(rng)];
  };
  std::uint32_t vocab = pick({12, 20, 33});
  std::uint32_t heads = pick({1, 2, 4});
  std::uint32_t d = heads * pick({4, 8});  // d = 2 makes layer norm constant
  std::uint32_t layers = pick({1, 2});
  auto arch = tiny_arch(models::ModelKind::kSeq2Seq, vocab, d, layers, heads, 2 * d, 32);
  models::Seq2SeqModel nmt(arch, rng());

  std::uniform_int_distribution<TokenId> tok(kNumSpecials, static_cast<TokenId>(vocab - 1));
  std::uniform_int_distribution<std::size_t> len(1, 6);
  auto sentence = [&] {
    TokenSeq s;
    std::size_t n = len(rng);
    for (std::size_t i = 0; i < n; ++i) s.ids.push_back(tok(rng));
    return s;
  };
  TokenSeq x = sentence(), t = sentence(), y = sentence();
  TensorF e_x = models::emb(nmt, x), e_t = models::emb(nmt, t);
  std::mt19937_64 erng(rng());
  TensorF e_omega = random_tensor({1, d}, erng).cast<float>();

  auto lg = attack::adversarial_loss_grad(nmt, e_x, e_omega, e_t, y);

  auto f = [&](const TensorD& omega_row) {
    Tape<double> tape;
    auto params = models::bind_parameters(tape, nmt.params(), false);
    std::vector<Var> rows{tape.leaf(e_x.cast<double>()), tape.leaf(omega_row), tape.leaf(e_t.cast<double>())};
    Var src = tape.concat(rows, 0);
    return tape.value(models::nmt_loss_graph(tape, nmt, params, src, y)).item();
  };
  auto fd = central_difference(f, e_omega.cast<double>(), 1e-3);
  return max_relative_error(std::as_const(lg.grad).data(), std::span<const double>(fd));
}

}  // namespace obf::testing

#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include "obf/tensor.hpp"
#include "obf/textkit.hpp"

namespace obf::grad {

/// Handle to a node recorded on a Tape.
struct Var {
  std::int32_t index = -1;
  bool valid() const { return index >= 0; }
};

enum class Op : std::uint8_t {
  kLeaf,
  kMatmul,
  kAdd,
  kScale,
  kTanh,
  kGelu,
  kSoftmax,
  kLayerNorm,
  kGather,
  kCrossEntropy,
  kConcat,
  kSlice,
};

/// Append-only reverse-mode tape over 2-D tensors.
///
/// Every op records its inputs by index, so inputs always precede outputs and
/// backward() is a single reverse sweep. Forward values are checked for
/// finiteness as they are produced; NumericError is thrown on NaN/Inf.
///
/// Broadcasting is limited to a one-element right operand of add().
template <typename Real>
class Tape {
 public:
  using TensorT = Tensor<Real>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  /// Leaf owning its value.
  Var leaf(TensorT value, bool trainable = false);
  /// Leaf borrowing `value`, which must outlive the tape.
  Var borrow(const TensorT& value, bool trainable = false);

  /// op(a) * op(b), where op transposes when the flag is set.
  Var matmul(Var a, Var b, bool transpose_a = false, bool transpose_b = false);
  /// Elementwise sum; `b` may also be a one-element tensor.
  Var add(Var a, Var b);
  Var scale(Var a, Real s);
  Var tanh(Var a);
  /// Tanh-approximated GELU.
  Var gelu(Var a);
  /// Row-wise softmax over the last axis, max-subtracted.
  Var softmax(Var a);
  /// Row-wise normalization followed by gain*xhat + bias; gain and bias hold
  /// one value per column.
  Var layer_norm(Var x, Var gain, Var bias, Real eps = Real(1e-5));
  /// Rows of `table` selected by `ids`: [ids.size() x cols(table)].
  Var gather(Var table, std::span<const TokenId> ids);
  /// Mean over rows whose target differs from `ignore` of -log softmax(logits)[r, target_r].
  /// Returns a scalar; zero when every row is ignored.
  Var cross_entropy(Var logits, std::span<const TokenId> targets, TokenId ignore = kPadId);
  /// axis 0 stacks rows, axis 1 stacks columns.
  Var concat(std::span<const Var> parts, int axis);
  /// Half-open range [begin, end) along `axis`.
  Var slice(Var a, int axis, std::size_t begin, std::size_t end);

  const TensorT& value(Var v) const;
  /// Zero tensor of the right shape when no gradient reached `v`.
  const TensorT& grad(Var v) const;
  bool trainable(Var v) const { return nodes_[check(v)].trainable; }
  /// True when backward() deposited a gradient into `v`.
  bool has_grad(Var v) const { return nodes_[check(v)].has_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar output. Gradients accumulate into every
  /// node reached; the tape may be swept only once.
  void backward(Var output);

 private:
  struct Node {
    Op op = Op::kLeaf;
    std::int32_t a = -1;
    std::int32_t b = -1;
    std::int32_t c = -1;
    std::vector<std::int32_t> parts;
    std::vector<TokenId> ids;
    TokenId ignore = -1;
    bool trainable = false;
    bool flag_a = false;
    bool flag_b = false;
    int axis = 0;
    std::size_t begin = 0;
    Real scalar = 0;
    const TensorT* borrowed = nullptr;
    TensorT value;
    TensorT aux;  // op-specific cache (layer-norm stats, softmax probabilities)
    TensorT grad;
    bool has_grad = false;
  };

  std::size_t check(Var v) const;
  Var push(Node node, const char* op_name);
  TensorT& grad_slot(std::int32_t index);
  void backward_node(std::size_t i);

  std::vector<Node> nodes_;
  bool swept_ = false;
  mutable std::deque<TensorT> zero_cache_;
};

extern template class Tape<float>;
extern template class Tape<double>;

// Helpers composed from the primitives.

/// Sum of all elements as a scalar.
template <typename Real>
Var sum(Tape<Real>& tape, Var x);

/// Inner product of two single-row tensors of equal length.
template <typename Real>
Var dot(Tape<Real>& tape, Var x, Var y);

}  // namespace obf::grad

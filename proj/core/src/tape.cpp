#include "obf/tape.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "obf/error.hpp"

namespace obf::grad {

namespace {

template <typename Real>
using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Real>
Eigen::Map<const RowMatrix<Real>> view(const Tensor<Real>& t) {
  return {t.raw(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

template <typename Real>
Eigen::Map<RowMatrix<Real>> view(Tensor<Real>& t) {
  return {t.raw(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

template <typename Real>
constexpr Real kGeluC = Real(0.7978845608028654);  // sqrt(2/pi)
template <typename Real>
constexpr Real kGeluA = Real(0.044715);

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch (" + detail + ")");
}

std::string dims(std::size_t r, std::size_t c) { return std::to_string(r) + "x" + std::to_string(c); }

}  // namespace

template <typename Real>
std::size_t Tape<Real>::check(Var v) const {
  if (v.index < 0 || static_cast<std::size_t>(v.index) >= nodes_.size()) {
    throw std::invalid_argument("variable does not belong to this tape");
  }
  return static_cast<std::size_t>(v.index);
}

template <typename Real>
const Tensor<Real>& Tape<Real>::value(Var v) const {
  const Node& n = nodes_[check(v)];
  return n.borrowed ? *n.borrowed : n.value;
}

template <typename Real>
const Tensor<Real>& Tape<Real>::grad(Var v) const {
  const Node& n = nodes_[check(v)];
  if (n.has_grad) return n.grad;
  return zero_cache_.emplace_back(value(v).shape());
}

template <typename Real>
Var Tape<Real>::push(Node node, const char* op_name) {
  if (swept_) throw std::logic_error("tape already swept; record a new tape");
  const TensorT& v = node.borrowed ? *node.borrowed : node.value;
  if (!v.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op_name);
  nodes_.push_back(std::move(node));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <typename Real>
Var Tape<Real>::leaf(TensorT value, bool trainable) {
  Node n;
  n.op = Op::kLeaf;
  n.trainable = trainable;
  n.value = std::move(value);
  return push(std::move(n), "leaf");
}

template <typename Real>
Var Tape<Real>::borrow(const TensorT& value, bool trainable) {
  Node n;
  n.op = Op::kLeaf;
  n.trainable = trainable;
  n.borrowed = &value;
  return push(std::move(n), "leaf");
}

// The `trainable` flag on interior nodes means "some trainable leaf is
// upstream", which lets backward skip constant subgraphs.

template <typename Real>
Var Tape<Real>::matmul(Var a, Var b, bool transpose_a, bool transpose_b) {
  const TensorT& va = value(a);
  const TensorT& vb = value(b);
  std::size_t m = transpose_a ? va.cols() : va.rows();
  std::size_t k = transpose_a ? va.rows() : va.cols();
  std::size_t k2 = transpose_b ? vb.cols() : vb.rows();
  std::size_t n = transpose_b ? vb.rows() : vb.cols();
  if (k != k2) shape_error("matmul", dims(m, k) + " * " + dims(k2, n));

  Node node;
  node.op = Op::kMatmul;
  node.a = a.index;
  node.b = b.index;
  node.flag_a = transpose_a;
  node.flag_b = transpose_b;
  node.trainable = nodes_[a.index].trainable || nodes_[b.index].trainable;
  node.value = TensorT::matrix(m, n);
  auto A = view(va);
  auto B = view(vb);
  auto C = view(node.value);
  if (m > 0 && n > 0) {
    if (k == 0) {
      C.setZero();
    } else if (!transpose_a && !transpose_b) {
      C.noalias() = A * B;
    } else if (!transpose_a && transpose_b) {
      C.noalias() = A * B.transpose();
    } else if (transpose_a && !transpose_b) {
      C.noalias() = A.transpose() * B;
    } else {
      C.noalias() = A.transpose() * B.transpose();
    }
  }
  return push(std::move(node), "matmul");
}

template <typename Real>
Var Tape<Real>::add(Var a, Var b) {
  const TensorT& va = value(a);
  const TensorT& vb = value(b);
  bool scalar_b = vb.size() == 1 && va.size() != 1;
  if (!scalar_b && va.size() != vb.size()) {
    shape_error("add", dims(va.rows(), va.cols()) + " + " + dims(vb.rows(), vb.cols()));
  }
  if (!scalar_b && (va.rows() != vb.rows() || va.cols() != vb.cols())) {
    shape_error("add", dims(va.rows(), va.cols()) + " + " + dims(vb.rows(), vb.cols()));
  }
  Node node;
  node.op = Op::kAdd;
  node.a = a.index;
  node.b = b.index;
  node.flag_b = scalar_b;
  node.trainable = nodes_[a.index].trainable || nodes_[b.index].trainable;
  node.value = va;
  if (scalar_b) {
    Real s = vb[0];
    for (auto& x : node.value.data()) x += s;
  } else {
    auto out = node.value.data();
    auto rhs = vb.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += rhs[i];
  }
  return push(std::move(node), "add");
}

template <typename Real>
Var Tape<Real>::scale(Var a, Real s) {
  Node node;
  node.op = Op::kScale;
  node.a = a.index;
  node.scalar = s;
  node.trainable = nodes_[check(a)].trainable;
  node.value = value(a);
  for (auto& x : node.value.data()) x *= s;
  return push(std::move(node), "scale");
}

template <typename Real>
Var Tape<Real>::tanh(Var a) {
  Node node;
  node.op = Op::kTanh;
  node.a = a.index;
  node.trainable = nodes_[check(a)].trainable;
  node.value = value(a);
  for (auto& x : node.value.data()) x = std::tanh(x);
  return push(std::move(node), "tanh");
}

template <typename Real>
Var Tape<Real>::gelu(Var a) {
  Node node;
  node.op = Op::kGelu;
  node.a = a.index;
  node.trainable = nodes_[check(a)].trainable;
  node.value = value(a);
  for (auto& x : node.value.data()) {
    Real u = kGeluC<Real> * (x + kGeluA<Real> * x * x * x);
    x = Real(0.5) * x * (Real(1) + std::tanh(u));
  }
  return push(std::move(node), "gelu");
}

template <typename Real>
Var Tape<Real>::softmax(Var a) {
  const TensorT& va = value(a);
  if (va.cols() == 0) throw std::invalid_argument("softmax: empty last axis");
  Node node;
  node.op = Op::kSoftmax;
  node.a = a.index;
  node.trainable = nodes_[a.index].trainable;
  node.value = va;
  std::size_t cols = va.cols();
  for (std::size_t r = 0; r < va.rows(); ++r) {
    auto row = node.value.row(r);
    Real mx = *std::max_element(row.begin(), row.end());
    Real total = 0;
    for (auto& x : row) {
      x = std::exp(x - mx);
      total += x;
    }
    for (std::size_t c = 0; c < cols; ++c) row[c] /= total;
  }
  return push(std::move(node), "softmax");
}

template <typename Real>
Var Tape<Real>::layer_norm(Var x, Var gain, Var bias, Real eps) {
  const TensorT& vx = value(x);
  const TensorT& vg = value(gain);
  const TensorT& vb = value(bias);
  std::size_t cols = vx.cols();
  if (vg.size() != cols || vb.size() != cols) {
    shape_error("layer_norm", "gain/bias length must equal " + std::to_string(cols));
  }
  if (cols == 0) throw std::invalid_argument("layer_norm: empty last axis");
  Node node;
  node.op = Op::kLayerNorm;
  node.a = x.index;
  node.b = gain.index;
  node.c = bias.index;
  node.scalar = eps;
  node.trainable = nodes_[x.index].trainable || nodes_[gain.index].trainable || nodes_[bias.index].trainable;
  node.value = vx;
  node.aux = TensorT::matrix(vx.rows(), 2);
  for (std::size_t r = 0; r < vx.rows(); ++r) {
    auto in = vx.row(r);
    auto out = node.value.row(r);
    Real mean = 0;
    for (Real v : in) mean += v;
    mean /= Real(cols);
    Real var = 0;
    for (Real v : in) var += (v - mean) * (v - mean);
    var /= Real(cols);
    Real rstd = Real(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) out[c] = (in[c] - mean) * rstd * vg[c] + vb[c];
    node.aux.at(r, 0) = mean;
    node.aux.at(r, 1) = rstd;
  }
  return push(std::move(node), "layer_norm");
}

template <typename Real>
Var Tape<Real>::gather(Var table, std::span<const TokenId> ids) {
  const TensorT& vt = value(table);
  std::size_t cols = vt.cols();
  Node node;
  node.op = Op::kGather;
  node.a = table.index;
  node.trainable = nodes_[table.index].trainable;
  node.ids.assign(ids.begin(), ids.end());
  node.value = TensorT::matrix(ids.size(), cols);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vt.rows()) {
      throw DataError("gather: id " + std::to_string(ids[i]) + " out of range");
    }
    auto src = vt.row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), node.value.row(i).begin());
  }
  return push(std::move(node), "gather");
}

template <typename Real>
Var Tape<Real>::cross_entropy(Var logits, std::span<const TokenId> targets, TokenId ignore) {
  const TensorT& vl = value(logits);
  if (vl.rows() != targets.size()) {
    shape_error("cross_entropy", std::to_string(vl.rows()) + " rows vs " + std::to_string(targets.size()) + " targets");
  }
  std::size_t cols = vl.cols();
  if (cols == 0) throw std::invalid_argument("cross_entropy: empty vocabulary axis");
  Node node;
  node.op = Op::kCrossEntropy;
  node.a = logits.index;
  node.trainable = nodes_[logits.index].trainable;
  node.ids.assign(targets.begin(), targets.end());
  node.ignore = ignore;
  node.aux = vl;  // becomes the probabilities
  Real total = 0;
  std::size_t counted = 0;
  for (std::size_t r = 0; r < vl.rows(); ++r) {
    auto row = node.aux.row(r);
    Real mx = *std::max_element(row.begin(), row.end());
    Real z = 0;
    for (auto& x : row) {
      x = std::exp(x - mx);
      z += x;
    }
    for (auto& x : row) x /= z;
    TokenId t = targets[r];
    if (t == ignore) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= cols) {
      throw DataError("cross_entropy: target id " + std::to_string(t) + " out of range");
    }
    // log-softmax computed directly to keep precision for confident logits.
    total += -(vl.at(r, static_cast<std::size_t>(t)) - mx - std::log(z));
    ++counted;
  }
  node.scalar = static_cast<Real>(counted);
  node.value = TensorT::scalar(counted == 0 ? Real(0) : total / Real(counted));
  return push(std::move(node), "cross_entropy");
}

template <typename Real>
Var Tape<Real>::concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  if (axis != 0 && axis != 1) throw std::invalid_argument("concat: axis must be 0 or 1");
  Node node;
  node.op = Op::kConcat;
  node.axis = axis;
  std::size_t rows = 0, cols = 0;
  const TensorT& first = value(parts[0]);
  if (axis == 0) {
    cols = first.cols();
    for (Var p : parts) {
      const TensorT& v = value(p);
      if (v.cols() != cols) shape_error("concat", "column counts differ");
      rows += v.rows();
    }
  } else {
    rows = first.rows();
    for (Var p : parts) {
      const TensorT& v = value(p);
      if (v.rows() != rows) shape_error("concat", "row counts differ");
      cols += v.cols();
    }
  }
  node.value = TensorT::matrix(rows, cols);
  std::size_t offset = 0;
  for (Var p : parts) {
    const TensorT& v = value(p);
    node.parts.push_back(p.index);
    node.trainable = node.trainable || nodes_[p.index].trainable;
    for (std::size_t r = 0; r < v.rows(); ++r) {
      auto src = v.row(r);
      if (axis == 0) {
        std::copy(src.begin(), src.end(), node.value.row(offset + r).begin());
      } else {
        std::copy(src.begin(), src.end(), node.value.row(r).begin() + static_cast<std::ptrdiff_t>(offset));
      }
    }
    offset += axis == 0 ? v.rows() : v.cols();
  }
  return push(std::move(node), "concat");
}

template <typename Real>
Var Tape<Real>::slice(Var a, int axis, std::size_t begin, std::size_t end) {
  const TensorT& va = value(a);
  if (axis != 0 && axis != 1) throw std::invalid_argument("slice: axis must be 0 or 1");
  std::size_t extent = axis == 0 ? va.rows() : va.cols();
  if (begin > end || end > extent) {
    throw std::invalid_argument("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                ") outside extent " + std::to_string(extent));
  }
  Node node;
  node.op = Op::kSlice;
  node.a = a.index;
  node.axis = axis;
  node.begin = begin;
  node.trainable = nodes_[a.index].trainable;
  if (axis == 0) {
    node.value = TensorT::matrix(end - begin, va.cols());
    for (std::size_t r = begin; r < end; ++r) {
      auto src = va.row(r);
      std::copy(src.begin(), src.end(), node.value.row(r - begin).begin());
    }
  } else {
    node.value = TensorT::matrix(va.rows(), end - begin);
    for (std::size_t r = 0; r < va.rows(); ++r) {
      auto src = va.row(r).subspan(begin, end - begin);
      std::copy(src.begin(), src.end(), node.value.row(r).begin());
    }
  }
  return push(std::move(node), "slice");
}

// ---------------------------------------------------------------------------
// Reverse sweep

template <typename Real>
Tensor<Real>& Tape<Real>::grad_slot(std::int32_t index) {
  Node& n = nodes_[static_cast<std::size_t>(index)];
  if (!n.has_grad) {
    const TensorT& v = n.borrowed ? *n.borrowed : n.value;
    n.grad = TensorT(v.shape());
    n.has_grad = true;
  }
  return n.grad;
}

template <typename Real>
void Tape<Real>::backward(Var output) {
  std::size_t out = check(output);
  if (swept_) throw std::logic_error("backward called twice on one tape");
  if (value(output).size() != 1) throw std::invalid_argument("backward: output must be a scalar");
  swept_ = true;
  grad_slot(output.index)[0] = Real(1);
  for (std::size_t i = out + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.trainable || n.op == Op::kLeaf) continue;
    backward_node(i);
  }
  for (const Node& n : nodes_) {
    if (n.op == Op::kLeaf && n.has_grad && !n.grad.all_finite()) throw NumericError("non-finite gradient");
  }
}

template <typename Real>
void Tape<Real>::backward_node(std::size_t i) {
  // References into nodes_ stay valid: the vector is not resized during the sweep.
  Node& n = nodes_[i];
  const TensorT& g = n.grad;
  auto wants = [this](std::int32_t idx) { return idx >= 0 && nodes_[static_cast<std::size_t>(idx)].trainable; };

  switch (n.op) {
    case Op::kLeaf:
      break;

    case Op::kMatmul: {
      const TensorT& va = value(Var{n.a});
      const TensorT& vb = value(Var{n.b});
      auto A = view(va);
      auto B = view(vb);
      auto G = view(g);
      if (wants(n.a) && G.size() > 0) {
        auto dA = view(grad_slot(n.a));
        if (!n.flag_a) {
          if (!n.flag_b) dA.noalias() += G * B.transpose();
          else dA.noalias() += G * B;
        } else {
          if (!n.flag_b) dA.noalias() += B * G.transpose();
          else dA.noalias() += B.transpose() * G.transpose();
        }
      }
      if (wants(n.b) && G.size() > 0) {
        auto dB = view(grad_slot(n.b));
        if (!n.flag_b) {
          if (!n.flag_a) dB.noalias() += A.transpose() * G;
          else dB.noalias() += A * G;
        } else {
          if (!n.flag_a) dB.noalias() += G.transpose() * A;
          else dB.noalias() += G.transpose() * A.transpose();
        }
      }
      break;
    }

    case Op::kAdd: {
      if (wants(n.a)) {
        auto d = grad_slot(n.a).data();
        auto src = g.data();
        for (std::size_t k = 0; k < d.size(); ++k) d[k] += src[k];
      }
      if (wants(n.b)) {
        auto& db = grad_slot(n.b);
        if (n.flag_b) {
          Real total = 0;
          for (Real v : g.data()) total += v;
          db[0] += total;
        } else {
          auto d = db.data();
          auto src = g.data();
          for (std::size_t k = 0; k < d.size(); ++k) d[k] += src[k];
        }
      }
      break;
    }

    case Op::kScale: {
      auto d = grad_slot(n.a).data();
      auto src = g.data();
      for (std::size_t k = 0; k < d.size(); ++k) d[k] += n.scalar * src[k];
      break;
    }

    case Op::kTanh: {
      auto d = grad_slot(n.a).data();
      auto y = n.value.data();
      auto src = g.data();
      for (std::size_t k = 0; k < d.size(); ++k) d[k] += src[k] * (Real(1) - y[k] * y[k]);
      break;
    }

    case Op::kGelu: {
      const TensorT& vx = value(Var{n.a});
      auto d = grad_slot(n.a).data();
      auto x = vx.data();
      auto src = g.data();
      for (std::size_t k = 0; k < d.size(); ++k) {
        Real xv = x[k];
        Real u = kGeluC<Real> * (xv + kGeluA<Real> * xv * xv * xv);
        Real th = std::tanh(u);
        Real du = kGeluC<Real> * (Real(1) + Real(3) * kGeluA<Real> * xv * xv);
        Real deriv = Real(0.5) * (Real(1) + th) + Real(0.5) * xv * (Real(1) - th * th) * du;
        d[k] += src[k] * deriv;
      }
      break;
    }

    case Op::kSoftmax: {
      auto& da = grad_slot(n.a);
      for (std::size_t r = 0; r < n.value.rows(); ++r) {
        auto y = n.value.row(r);
        auto gr = g.row(r);
        auto dr = da.row(r);
        Real inner = 0;
        for (std::size_t c = 0; c < y.size(); ++c) inner += gr[c] * y[c];
        for (std::size_t c = 0; c < y.size(); ++c) dr[c] += y[c] * (gr[c] - inner);
      }
      break;
    }

    case Op::kLayerNorm: {
      const TensorT& vx = value(Var{n.a});
      const TensorT& vg = value(Var{n.b});
      std::size_t cols = vx.cols();
      bool want_x = wants(n.a), want_g = wants(n.b), want_b = wants(n.c);
      TensorT* dx = want_x ? &grad_slot(n.a) : nullptr;
      TensorT* dg = want_g ? &grad_slot(n.b) : nullptr;
      TensorT* db = want_b ? &grad_slot(n.c) : nullptr;
      std::vector<Real> xhat(cols), dxhat(cols);
      for (std::size_t r = 0; r < vx.rows(); ++r) {
        Real mean = n.aux.at(r, 0);
        Real rstd = n.aux.at(r, 1);
        auto in = vx.row(r);
        auto gr = g.row(r);
        Real sum_dxhat = 0, sum_dxhat_xhat = 0;
        for (std::size_t c = 0; c < cols; ++c) {
          xhat[c] = (in[c] - mean) * rstd;
          dxhat[c] = gr[c] * vg[c];
          sum_dxhat += dxhat[c];
          sum_dxhat_xhat += dxhat[c] * xhat[c];
          if (dg) (*dg)[c] += gr[c] * xhat[c];
          if (db) (*db)[c] += gr[c];
        }
        if (dx) {
          auto dr = dx->row(r);
          Real inv_n = Real(1) / Real(cols);
          for (std::size_t c = 0; c < cols; ++c) {
            dr[c] += rstd * (dxhat[c] - inv_n * sum_dxhat - xhat[c] * inv_n * sum_dxhat_xhat);
          }
        }
      }
      break;
    }

    case Op::kGather: {
      // Scatter into the gathered rows only; all other rows stay exactly zero.
      auto& dt = grad_slot(n.a);
      for (std::size_t k = 0; k < n.ids.size(); ++k) {
        auto src = g.row(k);
        auto dst = dt.row(static_cast<std::size_t>(n.ids[k]));
        for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
      }
      break;
    }

    case Op::kCrossEntropy: {
      if (n.scalar == Real(0)) break;
      auto& dl = grad_slot(n.a);
      Real coef = g[0] / n.scalar;
      for (std::size_t r = 0; r < n.aux.rows(); ++r) {
        TokenId t = n.ids[r];
        if (t == n.ignore) continue;
        auto p = n.aux.row(r);
        auto dr = dl.row(r);
        for (std::size_t c = 0; c < p.size(); ++c) dr[c] += coef * p[c];
        dr[static_cast<std::size_t>(t)] -= coef;
      }
      break;
    }

    case Op::kConcat: {
      std::size_t offset = 0;
      for (std::int32_t idx : n.parts) {
        const TensorT& v = value(Var{idx});
        if (wants(idx)) {
          auto& dp = grad_slot(idx);
          for (std::size_t r = 0; r < v.rows(); ++r) {
            auto dst = dp.row(r);
            auto src = n.axis == 0 ? g.row(offset + r) : g.row(r).subspan(offset, v.cols());
            for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
          }
        }
        offset += n.axis == 0 ? v.rows() : v.cols();
      }
      break;
    }

    case Op::kSlice: {
      auto& da = grad_slot(n.a);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        auto src = g.row(r);
        auto dst = n.axis == 0 ? da.row(n.begin + r) : da.row(r).subspan(n.begin, g.cols());
        for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
      }
      break;
    }
  }
}

template class Tape<float>;
template class Tape<double>;

// ---------------------------------------------------------------------------

template <typename Real>
Var sum(Tape<Real>& tape, Var x) {
  const std::size_t rows = tape.value(x).rows(), cols = tape.value(x).cols();
  Var ones_row = tape.leaf(Tensor<Real>::filled({1, rows}, Real(1)));
  Var ones_col = tape.leaf(Tensor<Real>::filled({cols, 1}, Real(1)));
  return tape.matmul(tape.matmul(ones_row, x), ones_col);
}

template <typename Real>
Var dot(Tape<Real>& tape, Var x, Var y) {
  return tape.matmul(x, y, false, true);
}

template Var sum(Tape<float>&, Var);
template Var sum(Tape<double>&, Var);
template Var dot(Tape<float>&, Var, Var);
template Var dot(Tape<double>&, Var, Var);

}  // namespace obf::grad

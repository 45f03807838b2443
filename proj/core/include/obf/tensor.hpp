#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace obf::grad {

/// Dense row-major tensor. Ops treat it as a matrix whose column count is the
/// last dimension and whose row count is the product of the rest; a rank-0
/// tensor is a 1x1 scalar.
template <typename Real>
class Tensor {
 public:
  using value_type = Real;

  Tensor() : shape_{0}, data_{} {}
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<Real> data);

  static Tensor scalar(Real v) { return Tensor({}, {v}); }
  static Tensor matrix(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }
  static Tensor filled(std::vector<std::size_t> shape, Real v);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<Real> data() { return data_; }
  std::span<const Real> data() const { return data_; }
  Real* raw() { return data_.data(); }
  const Real* raw() const { return data_.data(); }

  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }
  Real& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  Real at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<Real> row(std::size_t r) { return std::span<Real>(data_).subspan(r * cols(), cols()); }
  std::span<const Real> row(std::size_t r) const {
    return std::span<const Real>(data_).subspan(r * cols(), cols());
  }

  /// Scalar value of a one-element tensor.
  Real item() const;
  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  template <typename Other>
  Tensor<Other> cast() const {
    std::vector<Other> d(data_.begin(), data_.end());
    return Tensor<Other>(shape_, std::move(d));
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<Real> data_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace obf::grad

#include "obf/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>

namespace obf::grad {

namespace {

std::size_t element_count(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

template <typename Real>
Tensor<Real>::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)), data_(element_count(shape_)) {}

template <typename Real>
Tensor<Real>::Tensor(std::vector<std::size_t> shape, std::vector<Real> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (element_count(shape_) != data_.size()) {
    throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                " does not match shape product " + std::to_string(element_count(shape_)));
  }
}

template <typename Real>
Tensor<Real> Tensor<Real>::filled(std::vector<std::size_t> shape, Real v) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), v);
  return t;
}

template <typename Real>
std::size_t Tensor<Real>::cols() const {
  return shape_.empty() ? 1 : shape_.back();
}

template <typename Real>
std::size_t Tensor<Real>::rows() const {
  if (shape_.empty()) return 1;
  std::size_t r = 1;
  for (std::size_t i = 0; i + 1 < shape_.size(); ++i) r *= shape_[i];
  return r;
}

template <typename Real>
Real Tensor<Real>::item() const {
  if (data_.size() != 1) throw std::invalid_argument("item() on a tensor with " + std::to_string(data_.size()) + " elements");
  return data_[0];
}

template <typename Real>
bool Tensor<Real>::all_finite() const {
  for (Real v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace obf::grad

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <initializer_list>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pathm3/error.hpp"

namespace pathm3 {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// Dense row-major tensor. Rank-1 tensors behave as a single row wherever an
// operation expects a matrix.
template <typename Real>
class Tensor {
 public:
  using value_type = Real;

  Tensor() : shape_{1}, data_(1, Real(0)) {}

  explicit Tensor(Shape shape, Real fill = Real(0)) : shape_(std::move(shape)) {
    check_shape();
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != shape_size(shape_)) {
      fail(ErrorKind::ShapeMismatch, "data length " + std::to_string(data_.size()) + " does not match shape " +
                                         shape_string(shape_));
    }
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<Real>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<Real> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) fail(ErrorKind::ShapeMismatch, "ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  static Tensor vector(std::initializer_list<Real> values) {
    return Tensor({values.size()}, std::vector<Real>(values));
  }

  static Tensor scalar(Real value) { return Tensor({1}, std::vector<Real>{value}); }

  static Tensor identity(std::size_t n) {
    Tensor out({n, n});
    for (std::size_t i = 0; i < n; ++i) out(i, i) = Real(1);
    return out;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const { return shape_.size() == 1 ? 1 : shape_[0]; }
  std::size_t cols() const { return shape_.back(); }

  std::span<Real> values() { return data_; }
  std::span<const Real> values() const { return data_; }
  const std::vector<Real>& storage() const { return data_; }

  Real& operator[](std::size_t i) { return data_[i]; }
  const Real& operator[](std::size_t i) const { return data_[i]; }
  Real& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const Real& operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  bool requires_grad() const { return requires_grad_; }
  Tensor& set_requires_grad(bool on) {
    requires_grad_ = on;
    return *this;
  }

  bool has_grad() const { return grad_.has_value(); }
  std::span<const Real> grad() const { return grad_ ? std::span<const Real>(*grad_) : std::span<const Real>(); }
  std::span<Real> grad() { return grad_ ? std::span<Real>(*grad_) : std::span<Real>(); }

  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), Real(0));
  }
  void clear_grad() { grad_.reset(); }

  void accumulate_grad(std::span<const Real> delta) {
    if (delta.size() != data_.size()) fail(ErrorKind::ShapeMismatch, "gradient length mismatch");
    if (!grad_) grad_.emplace(data_.size(), Real(0));
    for (std::size_t i = 0; i < delta.size(); ++i) (*grad_)[i] += delta[i];
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
  }

  template <typename To>
  Tensor<To> cast() const {
    std::vector<To> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](Real v) { return static_cast<To>(v); });
    return Tensor<To>(shape_, std::move(out));
  }

  // Shape and payload identical bit for bit.
  friend bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ &&
           (a.data_.empty() || std::memcmp(a.data_.data(), b.data_.data(), a.data_.size() * sizeof(Real)) == 0);
  }

 private:
  void check_shape() const {
    if (shape_.empty()) fail(ErrorKind::ShapeMismatch, "tensor shape must have at least one dimension");
    for (std::size_t d : shape_) {
      if (d == 0) fail(ErrorKind::ShapeMismatch, "tensor dimensions must be positive, got " + shape_string(shape_));
    }
  }

  Shape shape_;
  std::vector<Real> data_;
  bool requires_grad_ = false;
  std::optional<std::vector<Real>> grad_;
};

}  // namespace pathm3

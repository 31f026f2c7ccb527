// Copyright 2026 The Sandglasset Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sandglasset/errors.hpp"

namespace sandglasset {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::size_t b) { return a * b; });
}

inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

// Dense row-major array. The scalar type doubles as the precision flag:
// Tensor<float> for training/inference, Tensor<double> for gradient checks.
template <typename Real>
class Tensor {
 public:
  using value_type = Real;

  Tensor() = default;

  explicit Tensor(Shape shape, Real fill = Real(0))
      : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

  Tensor(Shape shape, std::vector<Real> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (element_count(shape_) != data_.size())
      throw DimensionError("tensor data length " +
                           std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
  }

  static Tensor vector(std::initializer_list<Real> values) {
    return Tensor({values.size()}, std::vector<Real>(values));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<Real>> rows) {
    std::size_t n_rows = rows.size();
    std::size_t n_cols = n_rows ? rows.begin()->size() : 0;
    std::vector<Real> data;
    data.reserve(n_rows * n_cols);
    for (const auto& row : rows) {
      if (row.size() != n_cols) throw DimensionError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({n_rows, n_cols}, std::move(data));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  Real* data() { return data_.data(); }
  const Real* data() const { return data_.data(); }
  std::span<Real> values() { return data_; }
  std::span<const Real> values() const { return data_; }
  std::vector<Real>& storage() { return data_; }
  const std::vector<Real>& storage() const { return data_; }

  Real& operator[](std::size_t i) { return data_[i]; }
  const Real& operator[](std::size_t i) const { return data_[i]; }

  Real& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const Real& at(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
  }
  Real& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const Real& at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  // Same data, new extents; the element count must be preserved.
  Tensor reshaped(Shape shape) const& {
    Tensor out = *this;
    out.reshape(std::move(shape));
    return out;
  }
  Tensor reshaped(Shape shape) && {
    reshape(std::move(shape));
    return std::move(*this);
  }
  void reshape(Shape shape) {
    if (element_count(shape) != data_.size())
      throw DimensionError("cannot reshape " + shape_string(shape_) + " to " +
                           shape_string(shape));
    shape_ = std::move(shape);
  }

  template <typename Other>
  Tensor<Other> cast() const {
    std::vector<Other> out(data_.begin(), data_.end());
    return Tensor<Other>(shape_, std::move(out));
  }

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<Real> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <typename Real>
void require_same_shape(const Tensor<Real>& a, const Tensor<Real>& b,
                        const char* what) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(what) + ": shape " +
                         shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
}

// Elementwise helpers used outside the autodiff graph.
template <typename Real>
void add_into(Tensor<Real>& dst, const Tensor<Real>& src) {
  require_same_shape(dst, src, "add_into");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename Real>
Tensor<Real> scaled(const Tensor<Real>& x, Real factor) {
  Tensor<Real> out = x;
  for (auto& v : out.storage()) v *= factor;
  return out;
}

}  // namespace sandglasset

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <span>
#include <string>

#include "shiftadd/errors.hpp"

namespace shiftadd {

/// Extent of a channels x rows x cols feature map. Rows are the time axis,
/// cols the space axis.
struct Shape {
  int channels = 1;
  int rows = 1;
  int cols = 1;

  std::size_t size() const {
    return static_cast<std::size_t>(channels) * rows * cols;
  }
  std::size_t plane() const { return static_cast<std::size_t>(rows) * cols; }
  bool operator==(const Shape &) const = default;
  std::string str() const {
    return std::to_string(channels) + "x" + std::to_string(rows) + "x" +
           std::to_string(cols);
  }
};

/// Dense 3-D feature map. Storage is a row-major (channels x rows*cols)
/// matrix, so one matrix row is one channel plane and the flat layout is
/// [c][r][w], the same order used by flatten.
template <typename Scalar>
class Tensor {
 public:
  using Storage =
      Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Tensor() : Tensor(Shape{}) {}
  Tensor(int channels, int rows, int cols)
      : Tensor(Shape{channels, rows, cols}) {}
  explicit Tensor(Shape shape) : shape_(shape) {
    if (shape.channels < 1 || shape.rows < 1 || shape.cols < 1)
      throw ConfigError("tensor dimensions must be >= 1, got " + shape.str());
    data_ = Storage::Zero(shape.channels,
                          static_cast<Eigen::Index>(shape.plane()));
  }

  static Tensor constant(Shape shape, Scalar value) {
    Tensor t(shape);
    t.data_.setConstant(value);
    return t;
  }

  const Shape &shape() const { return shape_; }
  int channels() const { return shape_.channels; }
  int rows() const { return shape_.rows; }
  int cols() const { return shape_.cols; }
  std::size_t size() const { return shape_.size(); }

  Scalar &operator()(int c, int r, int w) {
    return data_(c, static_cast<Eigen::Index>(r) * shape_.cols + w);
  }
  Scalar operator()(int c, int r, int w) const {
    return data_(c, static_cast<Eigen::Index>(r) * shape_.cols + w);
  }

  Storage &matrix() { return data_; }
  const Storage &matrix() const { return data_; }

  std::span<Scalar> flat() { return {data_.data(), size()}; }
  std::span<const Scalar> flat() const { return {data_.data(), size()}; }

  template <typename To>
  Tensor<To> cast() const {
    Tensor<To> out(shape_);
    out.matrix() = data_.template cast<To>();
    return out;
  }

  bool operator==(const Tensor &other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  Shape shape_;
  Storage data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace shiftadd

#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "sdn/error.hpp"

namespace sdn {

using Shape = std::vector<int>;

inline std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

inline Eigen::Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Eigen::Index{1}, std::multiplies<>());
}

// Dense row-major n-d array. Values live in an Eigen column vector so that
// elementwise arithmetic is written as Eigen expressions over values().
template <typename Scalar>
class BasicTensor {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowMajorMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMajorMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMajorMatrix>;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, Scalar fill = Scalar(0)) : shape_(std::move(shape)) {
    check_shape(shape_);
    values_ = Vector::Constant(shape_size(shape_), fill);
  }

  BasicTensor(Shape shape, std::initializer_list<Scalar> values) : shape_(std::move(shape)) {
    check_shape(shape_);
    if (static_cast<Eigen::Index>(values.size()) != shape_size(shape_))
      throw ShapeError("tensor " + to_string(shape_) + " needs " +
                       std::to_string(shape_size(shape_)) + " values, got " +
                       std::to_string(values.size()));
    values_.resize(static_cast<Eigen::Index>(values.size()));
    std::copy(values.begin(), values.end(), values_.data());
  }

  BasicTensor(Shape shape, Vector values) : shape_(std::move(shape)), values_(std::move(values)) {
    check_shape(shape_);
    if (values_.size() != shape_size(shape_))
      throw ShapeError("tensor " + to_string(shape_) + " needs " +
                       std::to_string(shape_size(shape_)) + " values, got " +
                       std::to_string(values_.size()));
  }

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Eigen::Index size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.size() == 0; }

  Vector& values() noexcept { return values_; }
  const Vector& values() const noexcept { return values_; }
  Scalar* data() noexcept { return values_.data(); }
  const Scalar* data() const noexcept { return values_.data(); }

  Scalar& operator[](Eigen::Index i) { return values_[i]; }
  Scalar operator[](Eigen::Index i) const { return values_[i]; }

  // [channels, height, width] indexing.
  Scalar& at(int c, int y, int x) { return values_[(Eigen::Index(c) * shape_[1] + y) * shape_[2] + x]; }
  Scalar at(int c, int y, int x) const {
    return values_[(Eigen::Index(c) * shape_[1] + y) * shape_[2] + x];
  }

  MatrixMap as_matrix(Eigen::Index rows, Eigen::Index cols) {
    check_view(rows, cols);
    return MatrixMap(values_.data(), rows, cols);
  }
  ConstMatrixMap as_matrix(Eigen::Index rows, Eigen::Index cols) const {
    check_view(rows, cols);
    return ConstMatrixMap(values_.data(), rows, cols);
  }

  BasicTensor reshaped(Shape shape) const {
    if (shape_size(shape) != size())
      throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    return BasicTensor(std::move(shape), values_);
  }

  template <typename Other>
  BasicTensor<Other> cast() const {
    return BasicTensor<Other>(shape_, values_.template cast<Other>());
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  static void check_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
    for (int d : shape)
      if (d < 1) throw ShapeError("tensor dimensions must be >= 1, got " + to_string(shape));
  }
  void check_view(Eigen::Index rows, Eigen::Index cols) const {
    if (rows * cols != size())
      throw ShapeError("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) +
                       " does not cover tensor " + to_string(shape_));
  }

  Shape shape_;
  Vector values_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

}  // namespace sdn

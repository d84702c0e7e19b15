#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace affspace {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major N-d array. The storage is an Eigen column vector so whole
/// tensor arithmetic goes through Eigen expressions via array().
template <typename Scalar>
class Tensor {
 public:
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Tensor() = default;

  explicit Tensor(Shape shape, Scalar fill = Scalar(0)) : shape_(std::move(shape)) {
    check_shape();
    values_ = Storage::Constant(shape_numel(shape_), fill);
  }

  /// Builds from explicit values; rejects length mismatch and non-finite data.
  Tensor(Shape shape, std::span<const Scalar> values) : shape_(std::move(shape)) {
    check_shape();
    if (static_cast<Index>(values.size()) != shape_numel(shape_))
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape_));
    values_ = Eigen::Map<const Storage>(values.data(), static_cast<Index>(values.size()));
    if (!all_finite()) throw std::domain_error("tensor constructed with non-finite values");
  }

  Tensor(Shape shape, std::initializer_list<Scalar> values)
      : Tensor(std::move(shape), std::span<const Scalar>(values.begin(), values.size())) {}

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape()); }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return values_.size(); }
  bool empty() const { return values_.size() == 0; }

  Scalar* data() { return values_.data(); }
  const Scalar* data() const { return values_.data(); }
  std::span<Scalar> span() { return {values_.data(), static_cast<std::size_t>(values_.size())}; }
  std::span<const Scalar> span() const {
    return {values_.data(), static_cast<std::size_t>(values_.size())};
  }

  Storage& array() { return values_; }
  const Storage& array() const { return values_; }

  Scalar& operator[](Index i) { return values_[i]; }
  Scalar operator[](Index i) const { return values_[i]; }

  // Rank-4 [B,C,H,W] accessors.
  Scalar& at(Index b, Index c, Index h, Index w) {
    return values_[((b * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  Scalar at(Index b, Index c, Index h, Index w) const {
    return values_[((b * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  Scalar item() const {
    if (values_.size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape_));
    return values_[0];
  }

  bool all_finite() const { return values_.isFinite().all(); }

  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != size())
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    Tensor out;
    out.shape_ = std::move(shape);
    out.values_ = values_;
    return out;
  }

  template <typename To>
  Tensor<To> cast() const {
    Tensor<To> out(shape_);
    out.array() = values_.template cast<To>();
    return out;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && (a.values_ == b.values_).all();
  }

 private:
  void check_shape() const {
    for (Index d : shape_)
      if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape_));
  }

  Shape shape_;
  Storage values_;
};

template <typename Scalar>
Scalar max_abs_diff(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff: shape mismatch");
  return (a.array() - b.array()).abs().maxCoeff();
}

}  // namespace affspace

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fracsim {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

/// Raised when tensor extents do not compose. The message names the axis.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major n-dimensional array backed by an Eigen column vector.
///
/// The optional gradient buffer has the same length as the data. Training
/// uses Tensor<double>; integer codes for the accelerator use
/// Tensor<std::int32_t>.
template <typename Scalar>
class Tensor {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Vector::Zero(shape_size(shape_))) {}

  Tensor(Shape shape, Vector data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size()) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor constant(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  template <typename Rng>
  static Tensor normal(Shape shape, Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (Index i = 0; i < t.size(); ++i) t.data_[i] = static_cast<Scalar>(dist(rng));
    return t;
  }

  template <typename Rng>
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (Index i = 0; i < t.size(); ++i) t.data_[i] = static_cast<Scalar>(dist(rng));
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return data_.size(); }

  Vector& data() { return data_; }
  const Vector& data() const { return data_; }
  Scalar* ptr() { return data_.data(); }
  const Scalar* ptr() const { return data_.data(); }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Scalar& at(Index a, Index b, Index c, Index d) { return data_[offset4(a, b, c, d)]; }
  Scalar at(Index a, Index b, Index c, Index d) const { return data_[offset4(a, b, c, d)]; }
  Scalar& at(Index a, Index b) { return data_[a * shape_[1] + b]; }
  Scalar at(Index a, Index b) const { return data_[a * shape_[1] + b]; }

  /// Same data under a new shape with equal element count.
  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  bool has_grad() const { return grad_.has_value(); }
  Vector& grad() { return grad_.value(); }
  const Vector& grad() const { return grad_.value(); }
  void set_grad(Vector g) {
    if (g.size() != data_.size()) throw DimensionError("gradient length does not match data length");
    grad_ = std::move(g);
  }
  void zero_grad() { grad_ = Vector::Zero(data_.size()); }
  void clear_grad() { grad_.reset(); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  bool all_finite() const {
    if constexpr (std::is_floating_point_v<Scalar>) {
      return data_.allFinite();
    } else {
      return true;
    }
  }

 private:
  Index offset4(Index a, Index b, Index c, Index d) const {
    return ((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d;
  }

  Shape shape_;
  Vector data_;
  std::optional<Vector> grad_;
};

using RealTensor = Tensor<double>;
using CodeTensor = Tensor<std::int32_t>;

/// Throws DimensionError naming `what` and `axis` when the extents differ.
inline void expect_extent(const std::string& what, const std::string& axis, Index got, Index want) {
  if (got != want) {
    throw DimensionError(what + ": axis " + axis + " has extent " + std::to_string(got) + ", expected " +
                         std::to_string(want));
  }
}

inline void expect_rank(const std::string& what, const Shape& shape, std::size_t rank) {
  if (shape.size() != rank) {
    throw DimensionError(what + ": expected rank " + std::to_string(rank) + ", got shape " + shape_string(shape));
  }
}

}  // namespace fracsim

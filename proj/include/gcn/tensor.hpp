#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "gcn/errors.hpp"
#include "gcn/rng.hpp"

namespace gcn {

using Index = std::int64_t;
using Shape = std::vector<Index>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;
template <typename Scalar>
using ArrayMap = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
template <typename Scalar>
using ConstArrayMap = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Number of elements; throws ShapeError on an empty shape or an extent < 1.
inline Index checked_numel(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one extent");
  Index n = 1;
  for (Index e : shape) {
    if (e < 1) throw ShapeError("non-positive extent in shape " + shape_string(shape));
    n *= e;
  }
  return n;
}

/// Dense row-major n-d array. Scalars are rank-1 tensors of shape [1].
template <typename Scalar>
class Tensor {
public:
  using value_type = Scalar;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(checked_numel(shape_), Scalar(0)) {}

  Tensor(Shape shape, const std::vector<Scalar>& data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    if (static_cast<Index>(data_.size()) != checked_numel(shape_))
      throw ShapeError("buffer of " + std::to_string(data_.size()) + " elements does not fit shape " +
                       shape_string(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor constant(Shape shape, Scalar c) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), c);
    return t;
  }

  static Tensor scalar(Scalar v) { return constant({1}, v); }

  static Tensor uniform(Shape shape, double lo, double hi, RngState& rng) {
    if (!(lo < hi)) throw ContractError("uniform init requires lo < hi");
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = static_cast<Scalar>(rng.uniform(lo, hi));
    return t;
  }

  static Tensor gaussian(Shape shape, double mu, double sigma, RngState& rng) {
    if (!(sigma > 0)) throw ContractError("gaussian init requires sigma > 0");
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = static_cast<Scalar>(rng.gaussian(mu, sigma));
    return t;
  }

  static Tensor identity(Index n) {
    Tensor t({n, n});
    for (Index i = 0; i < n; ++i) t.data_[i * n + i] = Scalar(1);
    return t;
  }

  bool empty() const { return data_.empty(); }
  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return static_cast<Index>(data_.size()); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> values() { return data_; }
  std::span<const Scalar> values() const { return data_; }
  std::vector<Scalar> buffer() const { return {data_.begin(), data_.end()}; }

  Scalar& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  const Scalar& operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

  /// Same data, new shape.
  Tensor reshaped(Shape shape) const {
    if (checked_numel(shape) != size())
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  /// Row-major matrix view collapsing the leading axes into rows.
  MatrixMap<Scalar> matrix(Index rows, Index cols) {
    if (rows * cols != size()) throw ShapeError("matrix view does not cover the buffer");
    return MatrixMap<Scalar>(data_.data(), rows, cols);
  }
  ConstMatrixMap<Scalar> matrix(Index rows, Index cols) const {
    if (rows * cols != size()) throw ShapeError("matrix view does not cover the buffer");
    return ConstMatrixMap<Scalar>(data_.data(), rows, cols);
  }
  MatrixMap<Scalar> matrix() { return matrix(dim(0), size() / dim(0)); }
  ConstMatrixMap<Scalar> matrix() const { return matrix(dim(0), size() / dim(0)); }

  ArrayMap<Scalar> array() { return ArrayMap<Scalar>(data_.data(), size()); }
  ConstArrayMap<Scalar> array() const { return ConstArrayMap<Scalar>(data_.data(), size()); }

  void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename Other>
  Tensor<Other> cast() const {
    std::vector<Other> out(data_.begin(), data_.end());
    return Tensor<Other>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

private:
  Shape shape_;
  std::vector<Scalar, Eigen::aligned_allocator<Scalar>> data_;
};

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul of " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  Tensor<Scalar> out({a.dim(0), b.dim(1)});
  out.matrix().noalias() = a.matrix() * b.matrix();
  return out;
}

template <typename Scalar>
bool all_finite(const Tensor<Scalar>& t) {
  return t.array().isFinite().all();
}

}  // namespace gcn

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "vqaforge/errors.hpp"

namespace vqaforge {

using Index = Eigen::Index;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatMap = Eigen::Map<MatrixX<Scalar>>;
template <typename Scalar>
using ConstMatMap = Eigen::Map<const MatrixX<Scalar>>;

inline std::string shape_string(const std::vector<Index>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Dense n-dimensional array with row-major flat storage. All numeric data in
// the toolkit lives in one of these; Scalar is float for training runs and
// double wherever gradients are verified against finite differences.
template <typename Scalar>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<Index> shape) : shape_(std::move(shape)) {
    data_.setZero(checked_size(shape_));
  }

  Tensor(std::vector<Index> shape, std::initializer_list<Scalar> values)
      : shape_(std::move(shape)) {
    Index n = checked_size(shape_);
    if (static_cast<Index>(values.size()) != n)
      throw DimensionError("tensor: " + std::to_string(values.size()) +
                           " values for shape " + shape_string(shape_));
    data_.resize(n);
    Index i = 0;
    for (Scalar v : values) data_[i++] = v;
  }

  static Tensor zeros(std::vector<Index> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<Index> shape, Scalar value) {
    Tensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  static Tensor from_vector(std::vector<Index> shape, const std::vector<Scalar>& values) {
    Tensor t(std::move(shape));
    if (static_cast<Index>(values.size()) != t.size())
      throw DimensionError("tensor: " + std::to_string(values.size()) +
                           " values for shape " + shape_string(t.shape_));
    for (Index i = 0; i < t.size(); ++i) t.data_[i] = values[static_cast<std::size_t>(i)];
    return t;
  }

  int rank() const { return static_cast<int>(shape_.size()); }
  const std::vector<Index>& shape() const { return shape_; }
  Index dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return data_.size(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  ArrayX<Scalar>& flat() { return data_; }
  const ArrayX<Scalar>& flat() const { return data_; }

  Scalar& operator()(Index i) { return data_[i]; }
  Scalar operator()(Index i) const { return data_[i]; }
  Scalar& operator()(Index i, Index j) { return data_[i * shape_[1] + j]; }
  Scalar operator()(Index i, Index j) const { return data_[i * shape_[1] + j]; }
  Scalar& operator()(Index i, Index j, Index k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  Scalar operator()(Index i, Index j, Index k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  // Rank-2 view of the underlying storage.
  MatMap<Scalar> mat() {
    require_rank(2);
    return MatMap<Scalar>(data_.data(), shape_[0], shape_[1]);
  }
  ConstMatMap<Scalar> mat() const {
    require_rank(2);
    return ConstMatMap<Scalar>(data_.data(), shape_[0], shape_[1]);
  }

  // Arbitrary 2-d view, rows*cols must cover the whole tensor.
  MatMap<Scalar> mat(Index rows, Index cols) {
    if (rows * cols != size())
      throw DimensionError("tensor: cannot view " + shape_string(shape_) + " as " +
                           std::to_string(rows) + "x" + std::to_string(cols));
    return MatMap<Scalar>(data_.data(), rows, cols);
  }
  ConstMatMap<Scalar> mat(Index rows, Index cols) const {
    if (rows * cols != size())
      throw DimensionError("tensor: cannot view " + shape_string(shape_) + " as " +
                           std::to_string(rows) + "x" + std::to_string(cols));
    return ConstMatMap<Scalar>(data_.data(), rows, cols);
  }

  Tensor reshape(std::vector<Index> new_shape) const {
    Tensor t = *this;
    Index n = checked_size(new_shape);
    if (n != size())
      throw DimensionError("reshape: " + shape_string(shape_) + " to " +
                           shape_string(new_shape) + " changes element count");
    t.shape_ = std::move(new_shape);
    return t;
  }

  bool all_finite() const { return data_.isFinite().all(); }

  void check_finite(const char* what) const {
    if (!all_finite()) throw ValueError(std::string("non-finite values in ") + what);
  }

  void require_rank(int r) const {
    if (rank() != r)
      throw DimensionError("expected rank-" + std::to_string(r) + " tensor, got " +
                           shape_string(shape_));
  }

  void set_zero() { data_.setZero(); }

 private:
  static Index checked_size(const std::vector<Index>& shape) {
    Index n = 1;
    for (Index d : shape) {
      if (d <= 0) throw DimensionError("tensor: non-positive dimension in " + shape_string(shape));
      n *= d;
    }
    return n;
  }

  std::vector<Index> shape_;
  ArrayX<Scalar> data_;
};

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw DimensionError("matmul: need rank-2 operands, got " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()));
  if (a.dim(1) != b.dim(0))
    throw DimensionError("matmul: inner dimensions differ: " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  Tensor<Scalar> out({a.dim(0), b.dim(1)});
  out.mat().noalias() = a.mat() * b.mat();
  return out;
}

// Writes one numerically stable softmax row. The normalizing sum is
// accumulated in double so that even 20,000-wide float rows sum to 1 within
// a few ulp.
template <typename Scalar>
inline void softmax_into(const Scalar* x, Scalar* out, Index n) {
  Scalar m = x[0];
  for (Index i = 1; i < n; ++i) m = std::max(m, x[i]);
  double sum = 0.0;
  for (Index i = 0; i < n; ++i) {
    double e = std::exp(static_cast<double>(x[i]) - static_cast<double>(m));
    out[i] = static_cast<Scalar>(e);
    sum += e;
  }
  for (Index i = 0; i < n; ++i)
    out[i] = static_cast<Scalar>(static_cast<double>(out[i]) / sum);
}

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x) {
  if (x.rank() != 1 || x.size() == 0)
    throw DimensionError("softmax: need a non-empty rank-1 tensor, got " +
                         shape_string(x.shape()));
  Tensor<Scalar> out(x.shape());
  softmax_into(x.data(), out.data(), x.size());
  return out;
}

template <typename Scalar>
Tensor<Scalar> softmax_rows(const Tensor<Scalar>& x) {
  if (x.rank() != 2 || x.dim(1) == 0)
    throw DimensionError("softmax_rows: need a rank-2 tensor with non-empty rows, got " +
                         shape_string(x.shape()));
  Tensor<Scalar> out(x.shape());
  for (Index r = 0; r < x.dim(0); ++r)
    softmax_into(x.data() + r * x.dim(1), out.data() + r * x.dim(1), x.dim(1));
  return out;
}

inline constexpr double kLogClamp = 1e-12;

// -ln(pred[target]) with pred clamped to [1e-12, 1] before the log.
template <typename Scalar>
Scalar cross_entropy(const Tensor<Scalar>& pred, Index target) {
  if (pred.rank() != 1)
    throw DimensionError("cross_entropy: need a rank-1 tensor, got " +
                         shape_string(pred.shape()));
  if (target < 0 || target >= pred.size())
    throw BoundsError("cross_entropy: target " + std::to_string(target) +
                      " out of range [0," + std::to_string(pred.size()) + ")");
  double sum = 0.0;
  for (Index i = 0; i < pred.size(); ++i) sum += static_cast<double>(pred(i));
  if (std::abs(sum - 1.0) > 1e-6)
    throw ValueError("cross_entropy: prediction sums to " + std::to_string(sum) +
                     ", expected 1 within 1e-6");
  double p = std::min(std::max(static_cast<double>(pred(target)), kLogClamp), 1.0);
  return static_cast<Scalar>(-std::log(p));
}

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shapes differ: " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a, b, "add");
  Tensor<Scalar> out(a.shape());
  out.flat() = a.flat() + b.flat();
  return out;
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a, b, "mul");
  Tensor<Scalar> out(a.shape());
  out.flat() = a.flat() * b.flat();
  return out;
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  Tensor<Scalar> out(x.shape());
  out.flat() = x.flat().max(Scalar(0));
  return out;
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) {
  Tensor<Scalar> out(x.shape());
  out.flat() = Scalar(1) / (Scalar(1) + (-x.flat()).exp());
  return out;
}

template <typename Scalar>
Tensor<Scalar> tanh(const Tensor<Scalar>& x) {
  Tensor<Scalar> out(x.shape());
  out.flat() = x.flat().tanh();
  return out;
}

// Index of the maximum; ties break to the lowest index so predictions are
// deterministic.
template <typename Scalar>
Index argmax(const Tensor<Scalar>& x) {
  if (x.rank() != 1 || x.size() == 0)
    throw DimensionError("argmax: need a non-empty rank-1 tensor, got " +
                         shape_string(x.shape()));
  Index best = 0;
  for (Index i = 1; i < x.size(); ++i)
    if (x(i) > x(best)) best = i;
  return best;
}

// Collapses every axis after the first: (d0, d1, ..., dk) -> (d0, d1*...*dk).
template <typename Scalar>
Tensor<Scalar> flatten(const Tensor<Scalar>& x) {
  if (x.rank() < 2)
    throw DimensionError("flatten: need rank >= 2, got " + shape_string(x.shape()));
  return x.reshape({x.dim(0), x.size() / x.dim(0)});
}

}  // namespace vqaforge

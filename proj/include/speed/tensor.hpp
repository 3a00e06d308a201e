#pragma once

// Minimal dense numerics for the toy decoder.
//
// Storage is Eigen; every reduction below is an explicit loop over ascending
// indices so that results do not depend on Eigen's vectorisation or blocking.
// In particular each output row of matmul() is computed by the same code path
// whether it is requested alone or as part of a larger batch.

#include <Eigen/Core>

#include <cmath>
#include <concepts>
#include <sstream>
#include <stdexcept>
#include <string>

namespace speed {

template <typename Scalar>
using Tensor2D = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Tensor2Df = Tensor2D<float>;
using Vectorf = Vector<float>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

inline std::string shape_string(Eigen::Index rows, Eigen::Index cols) {
  std::ostringstream os;
  os << '[' << rows << 'x' << cols << ']';
  return os.str();
}

}  // namespace detail

/// out = x^T * b for a single row x. The shared dimension is reduced in
/// ascending order; this is the only kernel matmul() uses.
template <typename DerivedX, typename DerivedB>
Vector<typename DerivedX::Scalar> row_times(const Eigen::MatrixBase<DerivedX>& x,
                                            const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedX::Scalar;
  if (x.size() != b.rows()) {
    throw ShapeError("row_times: vector of length " + std::to_string(x.size()) +
                     " against matrix " + detail::shape_string(b.rows(), b.cols()));
  }
  Vector<Scalar> out = Vector<Scalar>::Zero(b.cols());
  for (Eigen::Index k = 0; k < b.rows(); ++k) {
    const Scalar xk = x(k);
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
      out(j) += xk * b(k, j);
    }
  }
  return out;
}

template <typename DerivedA, typename DerivedB>
Tensor2D<typename DerivedA::Scalar> matmul(const Eigen::MatrixBase<DerivedA>& a,
                                           const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + detail::shape_string(a.rows(), a.cols()) + " x " +
                     detail::shape_string(b.rows(), b.cols()));
  }
  Tensor2D<Scalar> out(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    out.row(i) = row_times(a.row(i).transpose(), b).transpose();
  }
  return out;
}

/// Ascending-order dot product.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar dot(const Eigen::MatrixBase<DerivedA>& a,
                              const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  if (a.size() != b.size()) {
    throw ShapeError("dot: lengths " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()));
  }
  Scalar acc{0};
  for (Eigen::Index i = 0; i < a.size(); ++i) acc += a(i) * b(i);
  return acc;
}

/// Ascending-order sum.
template <typename Derived>
typename Derived::Scalar sum(const Eigen::MatrixBase<Derived>& v) {
  typename Derived::Scalar acc{0};
  for (Eigen::Index i = 0; i < v.size(); ++i) acc += v(i);
  return acc;
}

template <typename Derived>
Vector<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  if (v.size() == 0) throw ShapeError("softmax: empty input");
  Scalar peak = v(0);
  for (Eigen::Index i = 1; i < v.size(); ++i) peak = std::max(peak, v(i));
  Vector<Scalar> out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) out(i) = std::exp(v(i) - peak);
  const Scalar total = sum(out);
  for (Eigen::Index i = 0; i < v.size(); ++i) out(i) /= total;
  return out;
}

template <typename DerivedV, typename DerivedG, typename DerivedB>
Vector<typename DerivedV::Scalar> layer_norm(const Eigen::MatrixBase<DerivedV>& v,
                                             const Eigen::MatrixBase<DerivedG>& gain,
                                             const Eigen::MatrixBase<DerivedB>& bias,
                                             typename DerivedV::Scalar eps) {
  using Scalar = typename DerivedV::Scalar;
  if (v.size() != gain.size() || v.size() != bias.size()) {
    throw ShapeError("layer_norm: lengths " + std::to_string(v.size()) + ", " +
                     std::to_string(gain.size()) + ", " + std::to_string(bias.size()));
  }
  if (v.size() == 0) throw ShapeError("layer_norm: empty input");
  if (!(eps > Scalar{0})) throw std::invalid_argument("layer_norm: eps must be positive");

  const auto n = static_cast<Scalar>(v.size());
  const Scalar mean = sum(v) / n;
  Scalar var{0};
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const Scalar d = v(i) - mean;
    var += d * d;
  }
  var /= n;
  const Scalar inv = Scalar{1} / std::sqrt(var + eps);
  Vector<Scalar> out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    out(i) = (v(i) - mean) * inv * gain(i) + bias(i);
  }
  return out;
}

/// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <std::floating_point Scalar>
Scalar gelu(Scalar x) {
  const Scalar c = static_cast<Scalar>(0.7978845608028654);  // sqrt(2/pi)
  const Scalar inner = c * (x + static_cast<Scalar>(0.044715) * x * x * x);
  return static_cast<Scalar>(0.5) * x * (Scalar{1} + std::tanh(inner));
}

template <typename Derived>
Vector<typename Derived::Scalar> gelu(const Eigen::MatrixBase<Derived>& v) {
  Vector<typename Derived::Scalar> out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) out(i) = gelu(v(i));
  return out;
}

}  // namespace speed

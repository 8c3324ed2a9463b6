#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace nowcast {

using Shape = std::vector<Eigen::Index>;

template <class Scalar>
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

template <class Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Index numel(const Shape& shape) {
  Eigen::Index n = 1;
  for (Eigen::Index d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ")";
  return os.str();
}

/// Dense n-dimensional array, row-major (last dimension fastest).
template <class Scalar>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    data_ = ArrayX<Scalar>::Zero(numel(shape_));
  }

  Tensor(Shape shape, ArrayX<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (numel(shape_) != data_.size())
      throw std::invalid_argument("Tensor: shape " + shape_str(shape_) +
                                  " does not match data length " + std::to_string(data_.size()));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor constant(Shape shape, Scalar v) {
    Tensor t(std::move(shape));
    t.data_.setConstant(v);
    return t;
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  Eigen::Index dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  Eigen::Index size() const { return data_.size(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  ArrayX<Scalar>& array() { return data_; }
  const ArrayX<Scalar>& array() const { return data_; }

  Scalar& operator[](Eigen::Index i) { return data_[i]; }
  Scalar operator[](Eigen::Index i) const { return data_[i]; }

  template <class... Ix>
  Scalar& operator()(Ix... idx) {
    return data_[offset(idx...)];
  }
  template <class... Ix>
  Scalar operator()(Ix... idx) const {
    return data_[offset(idx...)];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const { return data_.isFinite().all(); }

  template <class T>
  Tensor<T> cast() const {
    return Tensor<T>(shape_, data_.template cast<T>());
  }

  Tensor reshaped(Shape shape) const {
    if (numel(shape) != data_.size())
      throw std::invalid_argument("Tensor::reshaped: incompatible shape " + shape_str(shape));
    return Tensor(std::move(shape), data_);
  }

  bool operator==(const Tensor& o) const {
    return shape_ == o.shape_ && (data_ == o.data_).all();
  }

 private:
  template <class... Ix>
  Eigen::Index offset(Ix... idx) const {
    static_assert((std::is_integral_v<Ix> && ...));
    const Eigen::Index ix[] = {static_cast<Eigen::Index>(idx)...};
    constexpr size_t n = sizeof...(Ix);
    Eigen::Index off = 0;
    for (size_t i = 0; i < n; ++i) off = off * shape_[i] + ix[i];
    return off;
  }

  Shape shape_;
  ArrayX<Scalar> data_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

// ---------------------------------------------------------------------------
// Elementwise algebra
// ---------------------------------------------------------------------------

enum class BinaryOp { add, sub, mul };

template <class S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* who) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(who) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

template <class S>
Tensor<S> elementwise(const Tensor<S>& a, const Tensor<S>& b, BinaryOp op) {
  check_same_shape(a, b, "elementwise");
  Tensor<S> out(a.shape());
  switch (op) {
    case BinaryOp::add: out.array() = a.array() + b.array(); break;
    case BinaryOp::sub: out.array() = a.array() - b.array(); break;
    case BinaryOp::mul: out.array() = a.array() * b.array(); break;
  }
  return out;
}

/// Gradients of elementwise(a, b, op) w.r.t. a and b for upstream grad g.
template <class S>
std::pair<Tensor<S>, Tensor<S>> elementwise_backward(const Tensor<S>& g, const Tensor<S>& a,
                                                     const Tensor<S>& b, BinaryOp op) {
  check_same_shape(g, a, "elementwise_backward");
  check_same_shape(a, b, "elementwise_backward");
  Tensor<S> da(a.shape()), db(b.shape());
  switch (op) {
    case BinaryOp::add:
      da.array() = g.array();
      db.array() = g.array();
      break;
    case BinaryOp::sub:
      da.array() = g.array();
      db.array() = -g.array();
      break;
    case BinaryOp::mul:
      da.array() = g.array() * b.array();
      db.array() = g.array() * a.array();
      break;
  }
  return {std::move(da), std::move(db)};
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

enum class Activation { sigmoid, tanh, relu };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
  }
  return "?";
}

template <class S>
Tensor<S> apply_activation(const Tensor<S>& x, Activation kind) {
  Tensor<S> out(x.shape());
  switch (kind) {
    case Activation::sigmoid: out.array() = x.array().logistic(); break;
    case Activation::tanh: out.array() = x.array().tanh(); break;
    case Activation::relu: out.array() = x.array().max(S(0)); break;
  }
  return out;
}

/// Backward given upstream grad, the forward input x and forward output y.
template <class S>
Tensor<S> activation_backward(const Tensor<S>& grad, const Tensor<S>& x, const Tensor<S>& y,
                              Activation kind) {
  check_same_shape(grad, x, "activation_backward");
  Tensor<S> dx(x.shape());
  switch (kind) {
    case Activation::sigmoid:
      dx.array() = grad.array() * y.array() * (S(1) - y.array());
      break;
    case Activation::tanh:
      dx.array() = grad.array() * (S(1) - y.array().square());
      break;
    case Activation::relu:
      dx.array() = (x.array() > S(0)).select(grad.array(), S(0));
      break;
  }
  return dx;
}

}  // namespace nowcast

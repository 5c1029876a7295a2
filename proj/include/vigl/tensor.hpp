#pragma once

// Dense 2-D tensors with a per-batch reverse-mode tape.
//
// A Tensor is a cheap handle to a graph node. Operations on tensors that
// require gradients record their parents and a backward closure; calling
// backward() on a 1x1 result walks the recorded graph once in reverse
// topological order. The graph is owned by the result handle and is released
// when the last handle to it goes away.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace vigl {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;

  /// Data tensor: never receives a gradient.
  static Tensor constant(Matrix value);
  static Tensor scalar(double value);
  /// Leaf tensor that accumulates gradients across backward() calls.
  static Tensor parameter(Matrix value);

  bool defined() const noexcept { return node_ != nullptr; }
  Eigen::Index rows() const;
  Eigen::Index cols() const;
  Eigen::Index size() const { return rows() * cols(); }

  const Matrix& value() const;
  /// Mutable access for optimizers and checkpoint loading. Leaves only.
  Matrix& mutable_value();
  /// Gradient buffer; zero-sized until the first backward() that reaches it.
  const Matrix& grad() const;
  Matrix& mutable_grad();
  bool has_grad() const;
  void zero_grad();

  bool requires_grad() const;
  bool is_leaf() const;

  /// Value of a 1x1 tensor.
  double item() const;

  // Internal: used by op implementations.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Runs reverse-mode differentiation from a scalar (1x1) loss. Parameter
/// gradients accumulate; intermediate gradients are recomputed on every call,
/// so backward() may be invoked several times on one graph.
void backward(const Tensor& loss);

/// Disables graph recording for its lifetime (inference paths).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Shape-checked primitives.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// a (n x m) plus a row vector b (1 x m) added to every row.
Tensor add_row(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
/// s * a + shift, elementwise.
Tensor affine(const Tensor& a, double s, double shift);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor square(const Tensor& a);
/// Convex conjugate of the Pearson generator (u-1)^2 over u >= 0:
/// t + t^2/4 for t >= -2, and -1 below.
Tensor pearson_conjugate(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& a, Eigen::Index begin, Eigen::Index count);
Tensor gather_rows(const Tensor& a, std::span<const int> rows);
/// out[i] = a[i, cols[i]] as an n x 1 column.
Tensor pick(const Tensor& a, std::span<const int> cols);
/// Repeats a 1x1 tensor into an n x 1 column.
Tensor broadcast_column(const Tensor& a, Eigen::Index n);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator-(const Tensor& a) { return scale(a, -1.0); }

}  // namespace vigl

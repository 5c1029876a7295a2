#include "vigl/tensor.hpp"

#include "vigl/errors.hpp"

#include <cmath>
#include <string>
#include <unordered_set>
#include <utility>

namespace vigl {

namespace detail {

struct Node {
  Matrix value;
  Matrix grad;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(Node&)> backward;
  bool requires_grad = false;
  bool leaf = true;

  void accumulate(const Matrix& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

}  // namespace detail

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

thread_local bool g_grad_enabled = true;

std::string shape_str(const Tensor& t) {
  return "[" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + "]";
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

// Builds a result node. The closure is only kept when some parent needs a
// gradient and recording is enabled.
Tensor make_result(Matrix value, std::vector<NodePtr> parents, std::function<void(Node&)> bw) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->leaf = false;
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) needs = needs || p->requires_grad;
  }
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(bw);
  }
  return Tensor(std::move(node));
}

Node& n(const Tensor& t) {
  if (!t.defined()) throw ContractError("operation on an undefined tensor");
  return *t.node();
}

}  // namespace

Tensor Tensor::constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) {
  Matrix m(1, 1);
  m(0, 0) = value;
  return constant(std::move(m));
}

Tensor Tensor::parameter(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Tensor(std::move(node));
}

Eigen::Index Tensor::rows() const { return n(*this).value.rows(); }
Eigen::Index Tensor::cols() const { return n(*this).value.cols(); }
const Matrix& Tensor::value() const { return n(*this).value; }

Matrix& Tensor::mutable_value() {
  if (!is_leaf()) throw ContractError("mutable_value on a non-leaf tensor");
  return n(*this).value;
}

const Matrix& Tensor::grad() const { return n(*this).grad; }
Matrix& Tensor::mutable_grad() {
  auto& node = n(*this);
  if (node.grad.size() == 0) node.grad = Matrix::Zero(node.value.rows(), node.value.cols());
  return node.grad;
}
bool Tensor::has_grad() const { return n(*this).grad.size() != 0; }
void Tensor::zero_grad() { n(*this).grad.resize(0, 0); }
bool Tensor::requires_grad() const { return n(*this).requires_grad; }
bool Tensor::is_leaf() const { return n(*this).leaf; }

double Tensor::item() const {
  if (rows() != 1 || cols() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(*this));
  return value()(0, 0);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void backward(const Tensor& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw ContractError("backward requires a scalar loss, got " + shape_str(loss));
  }
  const NodePtr& root = loss.node();
  if (!root->requires_grad) return;
  if (root->leaf) {
    root->accumulate(Matrix::Ones(1, 1));
    return;
  }

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && !parent->leaf && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* node : order) node->grad.resize(0, 0);
  root->grad = Matrix::Ones(1, 1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && node->grad.size() != 0) node->backward(*node);
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a) + " x " + shape_str(b));
  }
  Matrix out = a.value() * b.value();
  return make_result(std::move(out), {a.node(), b.node()}, [](Node& self) {
    Node& x = *self.parents[0];
    Node& w = *self.parents[1];
    if (x.requires_grad) x.accumulate(self.grad * w.value.transpose());
    if (w.requires_grad) w.accumulate(x.value.transpose() * self.grad);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  return make_result(a.value() + b.value(), {a.node(), b.node()}, [](Node& self) {
    for (auto& p : self.parents) {
      if (p->requires_grad) p->accumulate(self.grad);
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  return make_result(a.value() - b.value(), {a.node(), b.node()}, [](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) self.parents[1]->accumulate(-self.grad);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Matrix out = a.value().cwiseProduct(b.value());
  return make_result(std::move(out), {a.node(), b.node()}, [](Node& self) {
    Node& x = *self.parents[0];
    Node& y = *self.parents[1];
    if (x.requires_grad) x.accumulate(self.grad.cwiseProduct(y.value));
    if (y.requires_grad) y.accumulate(self.grad.cwiseProduct(x.value));
  });
}

Tensor add_row(const Tensor& a, const Tensor& b) {
  if (b.rows() != 1 || b.cols() != a.cols()) {
    throw ShapeError("add_row: expected 1x" + std::to_string(a.cols()) + " row, got " + shape_str(b));
  }
  Matrix out = a.value().rowwise() + b.value().row(0);
  return make_result(std::move(out), {a.node(), b.node()}, [](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) self.parents[1]->accumulate(self.grad.colwise().sum());
  });
}

Tensor scale(const Tensor& a, double s) {
  return make_result(a.value() * s, {a.node()}, [s](Node& self) {
    self.parents[0]->accumulate(self.grad * s);
  });
}

Tensor add_scalar(const Tensor& a, double s) { return affine(a, 1.0, s); }

Tensor affine(const Tensor& a, double s, double shift) {
  Matrix out = (a.value() * s).array() + shift;
  return make_result(std::move(out), {a.node()}, [s](Node& self) {
    self.parents[0]->accumulate(self.grad * s);
  });
}

Tensor relu(const Tensor& a) {
  Matrix out = a.value().cwiseMax(0.0);
  return make_result(std::move(out), {a.node()}, [](Node& self) {
    Node& x = *self.parents[0];
    x.accumulate((x.value.array() > 0.0).cast<double>().matrix().cwiseProduct(self.grad));
  });
}

Tensor sigmoid(const Tensor& a) {
  Matrix out = a.value().unaryExpr([](double v) {
    // Split by sign so exp never overflows.
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  return make_result(std::move(out), {a.node()}, [](Node& self) {
    const auto s = self.value.array();
    self.parents[0]->accumulate((self.grad.array() * s * (1.0 - s)).matrix());
  });
}

Tensor tanh(const Tensor& a) {
  // Eigen's exp is vectorized for doubles and its tanh is not. Absolute
  // error stays within a few ulp of 1; exp overflow saturates to +-1.
  Matrix out = (1.0 - 2.0 / ((2.0 * a.value().array()).exp() + 1.0)).matrix();
  return make_result(std::move(out), {a.node()}, [](Node& self) {
    const auto t = self.value.array();
    self.parents[0]->accumulate((self.grad.array() * (1.0 - t * t)).matrix());
  });
}

Tensor exp(const Tensor& a) {
  Matrix out = a.value().array().exp().matrix();
  return make_result(std::move(out), {a.node()}, [](Node& self) {
    self.parents[0]->accumulate(self.grad.cwiseProduct(self.value));
  });
}

Tensor square(const Tensor& a) {
  Matrix out = a.value().array().square().matrix();
  return make_result(std::move(out), {a.node()}, [](Node& self) {
    Node& x = *self.parents[0];
    x.accumulate((2.0 * self.grad.array() * x.value.array()).matrix());
  });
}

Tensor pearson_conjugate(const Tensor& a) {
  Matrix out = a.value().unaryExpr([](double t) { return t >= -2.0 ? t + 0.25 * t * t : -1.0; });
  return make_result(std::move(out), {a.node()}, [](Node& self) {
    Node& x = *self.parents[0];
    Matrix d = x.value.unaryExpr([](double t) { return t >= -2.0 ? 1.0 + 0.5 * t : 0.0; });
    x.accumulate(d.cwiseProduct(self.grad));
  });
}

Tensor sum(const Tensor& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return make_result(std::move(out), {a.node()}, [](Node& self) {
    Node& x = *self.parents[0];
    x.accumulate(Matrix::Constant(x.value.rows(), x.value.cols(), self.grad(0, 0)));
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ContractError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<NodePtr> parents;
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    offsets.push_back(at);
    parents.push_back(p.node());
    at += p.cols();
  }
  return make_result(std::move(out), std::move(parents), [offsets](Node& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      Node& p = *self.parents[i];
      if (p.requires_grad) p.accumulate(self.grad.middleCols(offsets[i], p.value.cols()));
    }
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<NodePtr> parents;
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    offsets.push_back(at);
    parents.push_back(p.node());
    at += p.rows();
  }
  return make_result(std::move(out), std::move(parents), [offsets](Node& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      Node& p = *self.parents[i];
      if (p.requires_grad) p.accumulate(self.grad.middleRows(offsets[i], p.value.rows()));
    }
  });
}

Tensor slice_cols(const Tensor& a, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > a.cols()) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside " + shape_str(a));
  }
  Matrix out = a.value().middleCols(begin, count);
  return make_result(std::move(out), {a.node()}, [begin, count](Node& self) {
    Node& x = *self.parents[0];
    Matrix g = Matrix::Zero(x.value.rows(), x.value.cols());
    g.middleCols(begin, count) = self.grad;
    x.accumulate(g);
  });
}

Tensor gather_rows(const Tensor& a, std::span<const int> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) throw ShapeError("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(rows[i]);
  }
  std::vector<int> idx(rows.begin(), rows.end());
  return make_result(std::move(out), {a.node()}, [idx = std::move(idx)](Node& self) {
    Node& x = *self.parents[0];
    Matrix g = Matrix::Zero(x.value.rows(), x.value.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    x.accumulate(g);
  });
}

Tensor pick(const Tensor& a, std::span<const int> cols) {
  if (static_cast<Eigen::Index>(cols.size()) != a.rows()) throw ShapeError("pick: one column index per row required");
  Matrix out(a.rows(), 1);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const int c = cols[static_cast<std::size_t>(i)];
    if (c < 0 || c >= a.cols()) throw ShapeError("pick: column index out of range");
    out(i, 0) = a.value()(i, c);
  }
  std::vector<int> idx(cols.begin(), cols.end());
  return make_result(std::move(out), {a.node()}, [idx = std::move(idx)](Node& self) {
    Node& x = *self.parents[0];
    Matrix g = Matrix::Zero(x.value.rows(), x.value.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) g(static_cast<Eigen::Index>(i), idx[i]) = self.grad(static_cast<Eigen::Index>(i), 0);
    x.accumulate(g);
  });
}

Tensor broadcast_column(const Tensor& a, Eigen::Index n) {
  if (a.rows() != 1 || a.cols() != 1) throw ShapeError("broadcast_column expects a 1x1 tensor");
  Matrix out = Matrix::Constant(n, 1, a.value()(0, 0));
  return make_result(std::move(out), {a.node()}, [](Node& self) {
    Matrix g(1, 1);
    g(0, 0) = self.grad.sum();
    self.parents[0]->accumulate(g);
  });
}

}  // namespace vigl

// Minimal reverse-mode automatic differentiation over dense Eigen matrices.
//
// A Tensor is a shared handle to a graph node holding a value, an accumulated
// gradient and a backward closure. Graphs are built eagerly by the free
// functions below and released when the last handle goes away. Parameters are
// leaves with requires_grad set; their gradients accumulate across backward()
// calls until zero_grad().
//
// Inside a NoGradGuard scope no closures or parent links are recorded, so
// forward passes only read parameter values and can run concurrently over
// shared weights.

#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace crs::ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using Index = Eigen::Index;

namespace detail {
inline thread_local bool grad_mode = true;
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode; }

class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode) { detail::grad_mode = false; }
  ~NoGradGuard() { detail::grad_mode = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  template <typename Derived>
  void accumulate(const Eigen::MatrixBase<Derived>& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor constant(Matrix value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return Tensor(std::move(n));
  }

  static Tensor parameter(Matrix value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Tensor(std::move(n));
  }

  static Tensor scalar(double v) { return constant(Matrix::Constant(1, 1, v)); }

  bool defined() const { return static_cast<bool>(node_); }
  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() != 0; }
  bool requires_grad() const { return node_->requires_grad; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  double item() const { return node_->value(0, 0); }
  void zero_grad() { node_->grad.resize(0, 0); }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

inline Tensor make_result(Matrix value, std::initializer_list<Tensor> parents,
                          std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
      n->requires_grad = true;
      n->parents.reserve(parents.size());
      for (const auto& p : parents) n->parents.push_back(p.ptr());
      n->backward = std::move(backward);
    }
  }
  return Tensor(std::move(n));
}

inline Tensor make_result(Matrix value, const std::vector<Tensor>& parents,
                          std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
      n->requires_grad = true;
      n->parents.reserve(parents.size());
      for (const auto& p : parents) n->parents.push_back(p.ptr());
      n->backward = std::move(backward);
    }
  }
  return Tensor(std::move(n));
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) +
                                "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                                "x" + std::to_string(b.cols()));
  }
}

}  // namespace detail

// Runs reverse accumulation from a scalar (1x1) tensor.
inline void backward(const Tensor& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw std::invalid_argument("backward: loss must be 1x1");
  }
  if (!loss.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() != 0) {
      n->backward(*n);
      // Interior gradients are not needed after propagation.
      n->grad.resize(0, 0);
    }
  }
}

// ---- arithmetic -----------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  return detail::make_result(a.value() * b.value(), {a, b}, [](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) pa.accumulate(self.grad * pb.value.transpose());
    if (pb.requires_grad) pb.accumulate(pa.value.transpose() * self.grad);
  });
}

// a * b^T
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: inner dimension mismatch");
  return detail::make_result(a.value() * b.value().transpose(), {a, b}, [](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) pa.accumulate(self.grad * pb.value);
    if (pb.requires_grad) pb.accumulate(self.grad.transpose() * pa.value);
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  return detail::make_result(a.value() + b.value(), {a, b}, [](Node& self) {
    for (auto& p : self.parents)
      if (p->requires_grad) p->accumulate(self.grad);
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  return detail::make_result(a.value() - b.value(), {a, b}, [](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) self.parents[1]->accumulate(-self.grad);
  });
}

inline Tensor add_n(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw std::invalid_argument("add_n: empty input");
  Matrix v = xs.front().value();
  for (std::size_t i = 1; i < xs.size(); ++i) {
    detail::check_same_shape(xs.front(), xs[i], "add_n");
    v += xs[i].value();
  }
  return detail::make_result(std::move(v), xs, [](Node& self) {
    for (auto& p : self.parents)
      if (p->requires_grad) p->accumulate(self.grad);
  });
}

// Adds a 1xN row vector to every row of an MxN matrix.
inline Tensor add_row(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: bad row shape");
  Matrix v = a.value().rowwise() + row.value().row(0);
  return detail::make_result(std::move(v), {a, row}, [](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) self.parents[1]->accumulate(self.grad.colwise().sum());
  });
}

inline Tensor scale(const Tensor& a, double s) {
  return detail::make_result(a.value() * s, {a}, [s](Node& self) {
    self.parents[0]->accumulate(self.grad * s);
  });
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "hadamard");
  return detail::make_result(a.value().cwiseProduct(b.value()), {a, b}, [](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) pa.accumulate(self.grad.cwiseProduct(pb.value));
    if (pb.requires_grad) pb.accumulate(self.grad.cwiseProduct(pa.value));
  });
}

inline Tensor relu(const Tensor& a) {
  return detail::make_result(a.value().cwiseMax(0.0), {a}, [](Node& self) {
    auto& p = *self.parents[0];
    p.accumulate((p.value.array() > 0.0).cast<double>().matrix().cwiseProduct(self.grad));
  });
}

inline Tensor tanh(const Tensor& a) {
  Matrix v = a.value().array().tanh().matrix();
  return detail::make_result(v, {a}, [v](Node& self) {
    self.parents[0]->accumulate((1.0 - v.array().square()).matrix().cwiseProduct(self.grad));
  });
}

inline Tensor transpose(const Tensor& a) {
  return detail::make_result(a.value().transpose(), {a}, [](Node& self) {
    self.parents[0]->accumulate(self.grad.transpose());
  });
}

inline Tensor sum(const Tensor& a) {
  return detail::make_result(Matrix::Constant(1, 1, a.value().sum()), {a}, [](Node& self) {
    auto& p = *self.parents[0];
    p.accumulate(Matrix::Constant(p.value.rows(), p.value.cols(), self.grad(0, 0)));
  });
}

// ---- shape ----------------------------------------------------------------

inline Tensor slice_cols(const Tensor& a, Index start, Index count) {
  if (start < 0 || start + count > a.cols()) throw std::out_of_range("slice_cols");
  return detail::make_result(a.value().middleCols(start, count), {a}, [start, count](Node& self) {
    auto& p = *self.parents[0];
    Matrix g = Matrix::Zero(p.value.rows(), p.value.cols());
    g.middleCols(start, count) = self.grad;
    p.accumulate(g);
  });
}

inline Tensor slice_rows(const Tensor& a, Index start, Index count) {
  if (start < 0 || start + count > a.rows()) throw std::out_of_range("slice_rows");
  return detail::make_result(a.value().middleRows(start, count), {a}, [start, count](Node& self) {
    auto& p = *self.parents[0];
    Matrix g = Matrix::Zero(p.value.rows(), p.value.cols());
    g.middleRows(start, count) = self.grad;
    p.accumulate(g);
  });
}

inline Tensor concat_cols(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_cols: empty input");
  Index rows = xs.front().rows();
  Index total = 0;
  for (const auto& x : xs) {
    if (x.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    total += x.cols();
  }
  Matrix v(rows, total);
  Index off = 0;
  for (const auto& x : xs) {
    v.middleCols(off, x.cols()) = x.value();
    off += x.cols();
  }
  return detail::make_result(std::move(v), xs, [](Node& self) {
    Index o = 0;
    for (auto& p : self.parents) {
      Index c = p->value.cols();
      if (p->requires_grad) p->accumulate(self.grad.middleCols(o, c));
      o += c;
    }
  });
}

inline Tensor concat_rows(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_rows: empty input");
  Index cols = xs.front().cols();
  Index total = 0;
  for (const auto& x : xs) {
    if (x.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    total += x.rows();
  }
  Matrix v(total, cols);
  Index off = 0;
  for (const auto& x : xs) {
    v.middleRows(off, x.rows()) = x.value();
    off += x.rows();
  }
  return detail::make_result(std::move(v), xs, [](Node& self) {
    Index o = 0;
    for (auto& p : self.parents) {
      Index r = p->value.rows();
      if (p->requires_grad) p->accumulate(self.grad.middleRows(o, r));
      o += r;
    }
  });
}

// Column-major reshape (Eigen storage order).
inline Tensor reshape(const Tensor& a, Index rows, Index cols) {
  if (rows * cols != a.value().size()) throw std::invalid_argument("reshape: size mismatch");
  Matrix v = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  return detail::make_result(std::move(v), {a}, [](Node& self) {
    auto& p = *self.parents[0];
    p.accumulate(Eigen::Map<const Matrix>(self.grad.data(), p.value.rows(), p.value.cols()));
  });
}

inline Tensor gather_rows(const Tensor& table, const std::vector<int>& ids) {
  Matrix v(static_cast<Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows()) throw std::out_of_range("gather_rows: id out of range");
    v.row(static_cast<Index>(i)) = table.value().row(ids[i]);
  }
  return detail::make_result(std::move(v), {table}, [ids](Node& self) {
    auto& p = *self.parents[0];
    if (p.grad.size() == 0) p.grad = Matrix::Zero(p.value.rows(), p.value.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) p.grad.row(ids[i]) += self.grad.row(static_cast<Index>(i));
  });
}

// Mean over the rows whose keep flag is set (all rows when keep is empty).
inline Tensor mean_rows(const Tensor& a, const std::vector<bool>& keep = {}) {
  Index n = 0;
  RowVector acc = RowVector::Zero(a.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    if (keep.empty() || keep[static_cast<std::size_t>(i)]) {
      acc += a.value().row(i);
      ++n;
    }
  }
  if (n == 0) throw std::invalid_argument("mean_rows: no rows selected");
  acc /= static_cast<double>(n);
  return detail::make_result(Matrix(acc), {a}, [keep, n](Node& self) {
    auto& p = *self.parents[0];
    Matrix g = Matrix::Zero(p.value.rows(), p.value.cols());
    for (Index i = 0; i < g.rows(); ++i)
      if (keep.empty() || keep[static_cast<std::size_t>(i)]) g.row(i) = self.grad.row(0) / static_cast<double>(n);
    p.accumulate(g);
  });
}

// A * x for a constant sparse A.
inline Tensor spmm(std::shared_ptr<const SparseMatrix> A, const Tensor& x) {
  if (A->cols() != x.rows()) throw std::invalid_argument("spmm: dimension mismatch");
  Matrix v = (*A) * x.value();
  return detail::make_result(std::move(v), {x}, [A](Node& self) {
    self.parents[0]->accumulate(A->transpose() * self.grad);
  });
}

// ---- normalization and probabilities --------------------------------------

inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
  const Index n = x.cols();
  Matrix xhat(x.rows(), n);
  Vector inv_std(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    double mu = x.value().row(i).mean();
    double var = (x.value().row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.value().row(i).array() - mu) * inv_std(i);
  }
  Matrix y = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  y.rowwise() += beta.value().row(0);
  return detail::make_result(std::move(y), {x, gamma, beta}, [xhat, inv_std, n](Node& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    auto& pb = *self.parents[2];
    if (pg.requires_grad) pg.accumulate(self.grad.cwiseProduct(xhat).colwise().sum());
    if (pb.requires_grad) pb.accumulate(self.grad.colwise().sum());
    if (px.requires_grad) {
      Matrix dxhat = (self.grad.array().rowwise() * pg.value.row(0).array()).matrix();
      Matrix dx(dxhat.rows(), dxhat.cols());
      const double N = static_cast<double>(n);
      for (Index i = 0; i < dxhat.rows(); ++i) {
        double s1 = dxhat.row(i).sum();
        double s2 = dxhat.row(i).dot(xhat.row(i));
        dx.row(i) = (inv_std(i) / N) * (N * dxhat.row(i).array() - s1 - xhat.row(i).array() * s2).matrix();
      }
      px.accumulate(dx);
    }
  });
}

// Row-wise softmax. Entries equal to -inf yield exactly zero probability.
inline Matrix softmax_rows_value(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    double m = x.row(i).maxCoeff();
    y.row(i) = (x.row(i).array() - m).exp().matrix();
    y.row(i) /= y.row(i).sum();
  }
  return y;
}

inline Tensor softmax_rows(const Tensor& x) {
  Matrix y = softmax_rows_value(x.value());
  return detail::make_result(y, {x}, [y](Node& self) {
    Vector dot = self.grad.cwiseProduct(y).rowwise().sum();
    Matrix g = y.cwiseProduct(self.grad - dot.replicate(1, y.cols()));
    self.parents[0]->accumulate(g);
  });
}

// Row-wise log-softmax restricted to columns with mask[c] == true; masked
// columns are -inf in the output and receive no gradient. Empty mask = all.
inline Tensor log_softmax_rows(const Tensor& x, const std::vector<bool>& mask = {}) {
  const Index rows = x.rows(), cols = x.cols();
  if (!mask.empty() && static_cast<Index>(mask.size()) != cols)
    throw std::invalid_argument("log_softmax_rows: mask size mismatch");
  const double ninf = -std::numeric_limits<double>::infinity();
  Matrix y(rows, cols);
  Matrix prob = Matrix::Zero(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    double m = ninf;
    for (Index c = 0; c < cols; ++c)
      if (mask.empty() || mask[static_cast<std::size_t>(c)]) m = std::max(m, x.value()(i, c));
    if (m == ninf) throw std::invalid_argument("log_softmax_rows: empty support");
    double z = 0.0;
    for (Index c = 0; c < cols; ++c)
      if (mask.empty() || mask[static_cast<std::size_t>(c)]) z += std::exp(x.value()(i, c) - m);
    double lz = m + std::log(z);
    for (Index c = 0; c < cols; ++c) {
      if (mask.empty() || mask[static_cast<std::size_t>(c)]) {
        y(i, c) = x.value()(i, c) - lz;
        prob(i, c) = std::exp(y(i, c));
      } else {
        y(i, c) = ninf;
      }
    }
  }
  return detail::make_result(std::move(y), {x}, [prob, mask](Node& self) {
    const Index r = prob.rows(), c = prob.cols();
    Matrix g = Matrix::Zero(r, c);
    for (Index i = 0; i < r; ++i) {
      double s = 0.0;
      for (Index j = 0; j < c; ++j)
        if (mask.empty() || mask[static_cast<std::size_t>(j)]) s += self.grad(i, j);
      for (Index j = 0; j < c; ++j)
        if (mask.empty() || mask[static_cast<std::size_t>(j)]) g(i, j) = self.grad(i, j) - prob(i, j) * s;
    }
    self.parents[0]->accumulate(g);
  });
}

// Selects x(i, cols[i]) for each row i; returns a column vector.
inline Tensor pick(const Tensor& x, const std::vector<int>& cols) {
  if (static_cast<Index>(cols.size()) != x.rows()) throw std::invalid_argument("pick: one column per row");
  Matrix v(x.rows(), 1);
  for (Index i = 0; i < x.rows(); ++i) {
    int c = cols[static_cast<std::size_t>(i)];
    if (c < 0 || c >= x.cols()) throw std::out_of_range("pick: column out of range");
    v(i, 0) = x.value()(i, c);
  }
  return detail::make_result(std::move(v), {x}, [cols](Node& self) {
    auto& p = *self.parents[0];
    Matrix g = Matrix::Zero(p.value.rows(), p.value.cols());
    for (Index i = 0; i < g.rows(); ++i) g(i, cols[static_cast<std::size_t>(i)]) = self.grad(i, 0);
    p.accumulate(g);
  });
}

// Treats x as a vector and selects the listed entries (row-major positions of a 1xN row).
inline Tensor pick_entries(const Tensor& row, const std::vector<int>& cols) {
  if (row.rows() != 1) throw std::invalid_argument("pick_entries: expects a row vector");
  Matrix v(static_cast<Index>(cols.size()), 1);
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (cols[i] < 0 || cols[i] >= row.cols()) throw std::out_of_range("pick_entries: column out of range");
    v(static_cast<Index>(i), 0) = row.value()(0, cols[i]);
  }
  return detail::make_result(std::move(v), {row}, [cols](Node& self) {
    auto& p = *self.parents[0];
    Matrix g = Matrix::Zero(1, p.value.cols());
    for (std::size_t i = 0; i < cols.size(); ++i) g(0, cols[i]) += self.grad(static_cast<Index>(i), 0);
    p.accumulate(g);
  });
}

// Identity on the forward pass; blocks gradient flow.
inline Tensor stop_gradient(const Tensor& x) { return Tensor::constant(x.value()); }

}  // namespace crs::ad

// SPDX-License-Identifier: Apache-2.0
#include "seqfuse/diffcore.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "seqfuse/error.hpp"

namespace seqfuse {

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(int rank, std::size_t rows, std::size_t cols, std::vector<double> data)
    : rank_(rank), rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw DimensionError("tensor value count " + std::to_string(data_.size()) +
                         " does not match shape " + std::to_string(rows_) + "x" +
                         std::to_string(cols_));
  }
}

Tensor Tensor::scalar(double v) { return Tensor(0, 1, 1, {v}); }

Tensor Tensor::vector(std::size_t n, double fill) {
  return Tensor(1, n, 1, std::vector<double>(n, fill));
}

Tensor Tensor::vector(std::vector<double> values) {
  const auto n = values.size();
  return Tensor(1, n, 1, std::move(values));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return vector(std::vector<double>(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, double fill) {
  return Tensor(2, rows, cols, std::vector<double>(rows * cols, fill));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor(2, rows, cols, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t = matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

double Tensor::item() const {
  if (data_.size() != 1) throw DimensionError("item() on a tensor with " +
                                              std::to_string(data_.size()) + " values");
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::fill(double v) {
  for (double& x : data_) x = v;
}

Tensor Tensor::zeros_like() const {
  return Tensor(rank_, rows_, cols_, std::vector<double>(data_.size(), 0.0));
}

// ---------------------------------------------------------------------------
// Scalar helpers

double softplus(double x) {
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Graph

namespace {

std::string shape_str(const Tensor& t) {
  if (t.rank() == 0) return "scalar";
  if (t.rank() == 1) return "(" + std::to_string(t.rows()) + ")";
  return "(" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + ")";
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(a) + " vs " +
                         shape_str(b));
  }
}

void add_into(Tensor& dst, const Tensor& src, double s = 1.0) {
  auto d = dst.values();
  auto v = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * v[i];
}

}  // namespace

const Graph::Node& Graph::node(Var v) const {
  if (v.id >= nodes_.size()) throw ArgumentError("variable does not belong to this graph");
  return nodes_[v.id];
}

Var Graph::push(Node n) {
  if (!n.value.all_finite()) {
    throw NumericError("non-finite value produced by graph op " +
                       std::to_string(static_cast<int>(n.op)));
  }
  n.grad = n.value.zeros_like();
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::input(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Graph::matvec(Var w, Var x) {
  const Tensor& W = node(w).value;
  const Tensor& X = node(x).value;
  if (W.rank() != 2 || X.rank() != 1 || W.cols() != X.size()) {
    throw DimensionError("matvec: cannot multiply " + shape_str(W) + " by " + shape_str(X));
  }
  Tensor y = Tensor::vector(W.rows());
  const double* wp = W.data().data();
  const double* xp = X.data().data();
  const std::size_t cols = W.cols();
  for (std::size_t r = 0; r < W.rows(); ++r) {
    double acc = 0.0;
    const double* row = wp + r * cols;
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * xp[c];
    y[r] = acc;
  }
  Node n;
  n.value = std::move(y);
  n.op = Op::matvec;
  n.a = w.id;
  n.b = x.id;
  return push(std::move(n));
}

Var Graph::binary(Op op, Var a, Var b) {
  const Tensor& A = node(a).value;
  const Tensor& B = node(b).value;
  require_same_shape(A, B, "elementwise");
  Tensor y = A.zeros_like();
  for (std::size_t i = 0; i < y.size(); ++i) {
    switch (op) {
      case Op::add: y[i] = A[i] + B[i]; break;
      case Op::sub: y[i] = A[i] - B[i]; break;
      case Op::mul: y[i] = A[i] * B[i]; break;
      default: throw ArgumentError("not a binary op");
    }
  }
  Node n;
  n.value = std::move(y);
  n.op = op;
  n.a = a.id;
  n.b = b.id;
  return push(std::move(n));
}

Var Graph::add(Var a, Var b) { return binary(Op::add, a, b); }
Var Graph::sub(Var a, Var b) { return binary(Op::sub, a, b); }
Var Graph::mul(Var a, Var b) { return binary(Op::mul, a, b); }

Var Graph::unary(Op op, Var a) {
  const Tensor& A = node(a).value;
  Tensor y = A.zeros_like();
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double x = A[i];
    switch (op) {
      case Op::sigmoid: y[i] = seqfuse::sigmoid(x); break;
      case Op::tanh: y[i] = std::tanh(x); break;
      case Op::softplus: y[i] = seqfuse::softplus(x); break;
      case Op::relu: y[i] = x > 0.0 ? x : 0.0; break;
      default: throw ArgumentError("not a unary op");
    }
  }
  Node n;
  n.value = std::move(y);
  n.op = op;
  n.a = a.id;
  return push(std::move(n));
}

Var Graph::scale(Var a, double s) {
  Tensor y = node(a).value;
  for (double& v : y.values()) v *= s;
  Node n;
  n.value = std::move(y);
  n.op = Op::scale;
  n.a = a.id;
  n.scalar = s;
  return push(std::move(n));
}

Var Graph::sigmoid(Var a) { return unary(Op::sigmoid, a); }
Var Graph::tanh(Var a) { return unary(Op::tanh, a); }
Var Graph::softplus(Var a) { return unary(Op::softplus, a); }
Var Graph::relu(Var a) { return unary(Op::relu, a); }

Var Graph::euclidean(Var a, Var b) {
  const Tensor& A = node(a).value;
  const Tensor& B = node(b).value;
  require_same_shape(A, B, "euclidean");
  double acc = 0.0;
  for (std::size_t i = 0; i < A.size(); ++i) {
    const double d = A[i] - B[i];
    acc += d * d;
  }
  Node n;
  n.value = Tensor::scalar(std::sqrt(acc));
  n.op = Op::euclidean;
  n.a = a.id;
  n.b = b.id;
  return push(std::move(n));
}

Var Graph::mean_pool(std::span<const Var> items) {
  if (items.empty()) throw ArgumentError("mean_pool: empty list");
  Var total = sum(items);
  // Fold the 1/count into the sum node so the pool is a single node.
  Node& n = nodes_[total.id];
  const double inv = 1.0 / static_cast<double>(items.size());
  for (double& v : n.value.values()) v *= inv;
  n.op = Op::mean_pool;
  n.scalar = inv;
  return total;
}

Var Graph::sum(std::span<const Var> items) {
  if (items.empty()) throw ArgumentError("sum: empty list");
  const Tensor& first = node(items[0]).value;
  Tensor y = first;
  Node n;
  n.many.reserve(items.size());
  n.many.push_back(items[0].id);
  for (std::size_t k = 1; k < items.size(); ++k) {
    const Tensor& t = node(items[k]).value;
    require_same_shape(first, t, "sum");
    add_into(y, t);
    n.many.push_back(items[k].id);
  }
  n.value = std::move(y);
  n.op = Op::sum;
  n.scalar = 1.0;
  return push(std::move(n));
}

void Graph::zero_grad() {
  for (auto& n : nodes_) n.grad.fill(0.0);
}

void Graph::backward(Var loss) {
  const Node& root = node(loss);
  if (root.value.size() != 1) {
    throw ArgumentError("backward: loss must be a scalar, got " + shape_str(root.value));
  }

  std::vector<Tensor> adj(nodes_.size());
  auto adjoint = [&](std::uint32_t id) -> Tensor& {
    if (adj[id].size() == 0 && nodes_[id].value.size() != 0) adj[id] = nodes_[id].value.zeros_like();
    return adj[id];
  };
  adjoint(loss.id)[0] = 1.0;

  for (std::size_t idx = loss.id + 1; idx-- > 0;) {
    if (adj[idx].size() == 0) continue;
    const Node& n = nodes_[idx];
    const Tensor& g = adj[idx];
    switch (n.op) {
      case Op::leaf:
        break;
      case Op::matvec: {
        const Tensor& W = nodes_[n.a].value;
        const Tensor& X = nodes_[n.b].value;
        Tensor& dW = adjoint(n.a);
        Tensor& dX = adjoint(n.b);
        const std::size_t cols = W.cols();
        for (std::size_t r = 0; r < W.rows(); ++r) {
          const double gr = g[r];
          if (gr == 0.0) continue;
          double* dwrow = dW.values().data() + r * cols;
          const double* wrow = W.data().data() + r * cols;
          for (std::size_t c = 0; c < cols; ++c) {
            dwrow[c] += gr * X[c];
            dX[c] += wrow[c] * gr;
          }
        }
        break;
      }
      case Op::add:
        add_into(adjoint(n.a), g);
        add_into(adjoint(n.b), g);
        break;
      case Op::sub:
        add_into(adjoint(n.a), g);
        add_into(adjoint(n.b), g, -1.0);
        break;
      case Op::mul: {
        const Tensor& A = nodes_[n.a].value;
        const Tensor& B = nodes_[n.b].value;
        Tensor& dA = adjoint(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) dA[i] += g[i] * B[i];
        Tensor& dB = adjoint(n.b);
        for (std::size_t i = 0; i < g.size(); ++i) dB[i] += g[i] * A[i];
        break;
      }
      case Op::scale:
        add_into(adjoint(n.a), g, n.scalar);
        break;
      case Op::sigmoid: {
        Tensor& dA = adjoint(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double y = n.value[i];
          dA[i] += g[i] * y * (1.0 - y);
        }
        break;
      }
      case Op::tanh: {
        Tensor& dA = adjoint(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double y = n.value[i];
          dA[i] += g[i] * (1.0 - y * y);
        }
        break;
      }
      case Op::softplus: {
        const Tensor& A = nodes_[n.a].value;
        Tensor& dA = adjoint(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) dA[i] += g[i] * seqfuse::sigmoid(A[i]);
        break;
      }
      case Op::relu: {
        const Tensor& A = nodes_[n.a].value;
        Tensor& dA = adjoint(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (A[i] > 0.0) dA[i] += g[i];
        }
        break;
      }
      case Op::euclidean: {
        const double dist = n.value[0];
        if (dist == 0.0) break;
        const Tensor& A = nodes_[n.a].value;
        const Tensor& B = nodes_[n.b].value;
        const double s = g[0] / dist;
        Tensor& dA = adjoint(n.a);
        for (std::size_t i = 0; i < A.size(); ++i) dA[i] += s * (A[i] - B[i]);
        Tensor& dB = adjoint(n.b);
        for (std::size_t i = 0; i < A.size(); ++i) dB[i] -= s * (A[i] - B[i]);
        break;
      }
      case Op::mean_pool:
      case Op::sum:
        for (std::uint32_t p : n.many) add_into(adjoint(p), g, n.scalar);
        break;
    }
  }

  for (std::size_t idx = 0; idx < adj.size(); ++idx) {
    if (adj[idx].size() != 0) add_into(nodes_[idx].grad, adj[idx]);
  }
}

}  // namespace seqfuse

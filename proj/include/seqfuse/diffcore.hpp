// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode differentiation over dense vectors and matrices.
//
// A Graph is built fresh for every forward pass. Nodes are appended in
// evaluation order, so the node index order is already a topological order
// and backward() simply walks it in reverse, visiting each node once.
#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace seqfuse {

/// Dense row-major tensor of rank 0 (scalar), 1 (vector) or 2 (matrix).
class Tensor {
 public:
  Tensor() = default;

  static Tensor scalar(double v);
  static Tensor vector(std::size_t n, double fill = 0.0);
  static Tensor vector(std::vector<double> values);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor identity(std::size_t n);

  int rank() const { return rank_; }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool same_shape(const Tensor& other) const {
    return rank_ == other.rank_ && rows_ == other.rows_ && cols_ == other.cols_;
  }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double item() const;

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool all_finite() const;
  void fill(double v);
  /// Zero tensor of the same shape.
  Tensor zeros_like() const;

  bool operator==(const Tensor&) const = default;

 private:
  Tensor(int rank, std::size_t rows, std::size_t cols, std::vector<double> data);

  int rank_ = 1;
  std::size_t rows_ = 0;  // vector length for rank 1
  std::size_t cols_ = 1;
  std::vector<double> data_;
};

/// Handle to a node inside one Graph.
struct Var {
  std::uint32_t id = 0;
  friend bool operator==(Var, Var) = default;
};

class Graph {
 public:
  enum class Op : std::uint8_t {
    leaf, matvec, add, sub, mul, scale, sigmoid, tanh, softplus, relu,
    euclidean, mean_pool, sum
  };

  /// Leaf node. Gradients are accumulated for every leaf; callers decide
  /// which leaves are parameters.
  Var input(Tensor value);
  Var constant(double v) { return input(Tensor::scalar(v)); }

  Var matvec(Var w, Var x);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var softplus(Var a);
  Var relu(Var a);
  /// Plain L2 distance. The gradient at a == b is defined as zero.
  Var euclidean(Var a, Var b);
  /// Elementwise mean, summed in list order.
  Var mean_pool(std::span<const Var> items);
  Var sum(std::span<const Var> items);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const Tensor& grad(Var v) const { return nodes_.at(v.id).grad; }
  Op op(Var v) const { return nodes_.at(v.id).op; }
  std::size_t size() const { return nodes_.size(); }

  /// Accumulates dLoss/dNode into every node's gradient. Calling twice without
  /// zero_grad() doubles the stored gradients.
  void backward(Var loss);
  void zero_grad();

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Op op = Op::leaf;
    std::uint32_t a = 0;
    std::uint32_t b = 0;
    double scalar = 0.0;
    std::vector<std::uint32_t> many;
  };

  Var push(Node node);
  const Node& node(Var v) const;
  Var unary(Op op, Var a);
  Var binary(Op op, Var a, Var b);

  std::vector<Node> nodes_;
};

/// Numerically safe ln(1 + e^x).
double softplus(double x);
/// Numerically safe logistic function.
double sigmoid(double x);

}  // namespace seqfuse

#pragma once

// Dense row-major matrices and a small reverse-mode differentiation tape.
//
// The tape records one forward evaluation built from a closed set of
// primitives (matmul, add, broadcast-add, tanh, sigmoid, relu, elementwise
// multiply, square, mean). It is rebuilt for every evaluation; backward()
// walks the records once in reverse order and returns gradients for the
// parameter leaves only.

#include <cstddef>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace flowcausal::numkit {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  // Nested-list construction, mostly for tests: Matrix{{1, 2}, {3, 4}}.
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols_, cols_);
  }

  bool all_finite() const;
  bool operator==(const Matrix& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

std::string shape_string(const Matrix& m);

// Plain (untaped) kernels shared by the tape and by inference code.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);

// Handle to a value recorded on a Tape.
struct Var {
  std::size_t index = 0;
};

using Gradients = std::map<std::string, Matrix>;

class Tape {
 public:
  Var constant(Matrix value);
  // Parameter leaves receive an entry in the gradient map under `id`.
  // Registering the same id twice accumulates into one gradient.
  Var parameter(std::string id, Matrix value);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  // a (n x m) plus row vector (1 x m) broadcast over rows.
  Var add_row(Var a, Var row);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var relu(Var a);
  Var multiply(Var a, Var b);
  Var square(Var a);
  // Mean over all entries; result is 1 x 1.
  Var mean(Var a);

  const Matrix& value(Var v) const { return nodes_.at(v.index).value; }
  // Value of a 1 x 1 node.
  double scalar(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  // d root / d parameter for every parameter leaf. Root must be 1 x 1.
  Gradients backward(Var root) const;

 private:
  enum class Op { Constant, Parameter, MatMul, Add, AddRow, Tanh, Sigmoid, Relu, Multiply, Square, Mean };

  struct Node {
    Op op;
    std::size_t lhs = 0;
    std::size_t rhs = 0;
    Matrix value;
    std::string id;  // parameters only
  };

  Var push(Node node);
  const Node& node(Var v) const;

  std::vector<Node> nodes_;
};

}  // namespace flowcausal::numkit

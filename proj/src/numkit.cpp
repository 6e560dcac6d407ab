#include "flowcausal/numkit.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "flowcausal/errors.hpp"

namespace flowcausal::numkit {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw DimensionError("Matrix: data length " + std::to_string(data_.size()) + " != " +
                         std::to_string(rows_) + "x" + std::to_string(cols_));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw DimensionError("Matrix: ragged initializer list");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string shape_string(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + shape_string(a) + " * " + shape_string(b));
  }
  Matrix out(a.rows(), b.cols());
  const std::size_t n = a.rows();
  const std::size_t k = a.cols();
  const std::size_t m = b.cols();
  auto ad = a.data();
  auto bd = b.data();
  auto od = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ad[i * k + p];
      const double* brow = bd.data() + p * m;
      double* orow = od.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += aip * brow[j];
    }
  }
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(c, r) = m(r, c);
  return out;
}

namespace {

void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": " + shape_string(a) + " vs " + shape_string(b));
  }
}

template <class F>
Matrix map(const Matrix& a, F f) {
  Matrix out(a.rows(), a.cols());
  auto in = a.data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = f(in[i]);
  return out;
}

double logistic(double x) {
  // Split on sign so exp() never overflows.
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void accumulate(Matrix& into, const Matrix& delta) {
  auto d = into.data();
  auto s = delta.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

const Tape::Node& Tape::node(Var v) const {
  if (v.index >= nodes_.size()) throw ContractError("Tape: variable does not belong to this tape");
  return nodes_[v.index];
}

Var Tape::constant(Matrix value) { return push(Node{Op::Constant, 0, 0, std::move(value), {}}); }

Var Tape::parameter(std::string id, Matrix value) {
  return push(Node{Op::Parameter, 0, 0, std::move(value), std::move(id)});
}

Var Tape::matmul(Var a, Var b) {
  Matrix v = numkit::matmul(node(a).value, node(b).value);
  return push(Node{Op::MatMul, a.index, b.index, std::move(v), {}});
}

Var Tape::add(Var a, Var b) {
  const Matrix& x = node(a).value;
  const Matrix& y = node(b).value;
  require_same_shape("add", x, y);
  Matrix v = x;
  accumulate(v, y);
  return push(Node{Op::Add, a.index, b.index, std::move(v), {}});
}

Var Tape::add_row(Var a, Var row) {
  const Matrix& x = node(a).value;
  const Matrix& r = node(row).value;
  if (r.rows() != 1 || r.cols() != x.cols()) {
    throw DimensionError("add_row: " + shape_string(x) + " + " + shape_string(r));
  }
  Matrix v = x;
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (std::size_t j = 0; j < v.cols(); ++j) v(i, j) += r(0, j);
  return push(Node{Op::AddRow, a.index, row.index, std::move(v), {}});
}

Var Tape::tanh(Var a) {
  return push(Node{Op::Tanh, a.index, 0, map(node(a).value, [](double x) { return std::tanh(x); }), {}});
}

Var Tape::sigmoid(Var a) { return push(Node{Op::Sigmoid, a.index, 0, map(node(a).value, logistic), {}}); }

Var Tape::relu(Var a) {
  return push(Node{Op::Relu, a.index, 0, map(node(a).value, [](double x) { return x > 0.0 ? x : 0.0; }), {}});
}

Var Tape::multiply(Var a, Var b) {
  const Matrix& x = node(a).value;
  const Matrix& y = node(b).value;
  require_same_shape("multiply", x, y);
  Matrix v(x.rows(), x.cols());
  for (std::size_t i = 0; i < v.size(); ++i) v.data()[i] = x.data()[i] * y.data()[i];
  return push(Node{Op::Multiply, a.index, b.index, std::move(v), {}});
}

Var Tape::square(Var a) {
  return push(Node{Op::Square, a.index, 0, map(node(a).value, [](double x) { return x * x; }), {}});
}

Var Tape::mean(Var a) {
  const Matrix& x = node(a).value;
  if (x.empty()) throw ContractError("mean: empty matrix " + shape_string(x));
  double s = 0.0;
  for (double v : x.data()) s += v;
  return push(Node{Op::Mean, a.index, 0, Matrix(1, 1, s / static_cast<double>(x.size())), {}});
}

double Tape::scalar(Var v) const {
  const Matrix& m = node(v).value;
  if (m.rows() != 1 || m.cols() != 1) throw ContractError("scalar: node is " + shape_string(m));
  return m(0, 0);
}

Gradients Tape::backward(Var root) const {
  const Matrix& r = node(root).value;
  if (r.rows() != 1 || r.cols() != 1) {
    throw ContractError("backward: root must be 1x1, got " + shape_string(r));
  }
  // Adjoints are allocated lazily; nodes that do not feed the root stay empty.
  std::vector<Matrix> adj(root.index + 1);
  adj[root.index] = Matrix(1, 1, 1.0);

  auto add_adj = [&](std::size_t i, const Matrix& g) {
    if (adj[i].empty()) {
      adj[i] = g;
    } else {
      accumulate(adj[i], g);
    }
  };

  Gradients grads;
  for (std::size_t k = root.index + 1; k-- > 0;) {
    if (adj[k].empty()) continue;
    const Node& n = nodes_[k];
    const Matrix& g = adj[k];
    switch (n.op) {
      case Op::Constant:
        break;
      case Op::Parameter: {
        auto it = grads.find(n.id);
        if (it == grads.end()) {
          grads.emplace(n.id, g);
        } else {
          accumulate(it->second, g);
        }
        break;
      }
      case Op::MatMul: {
        const Matrix& a = nodes_[n.lhs].value;
        const Matrix& b = nodes_[n.rhs].value;
        add_adj(n.lhs, numkit::matmul(g, transpose(b)));
        add_adj(n.rhs, numkit::matmul(transpose(a), g));
        break;
      }
      case Op::Add:
        add_adj(n.lhs, g);
        add_adj(n.rhs, g);
        break;
      case Op::AddRow: {
        add_adj(n.lhs, g);
        Matrix col_sum(1, g.cols());
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j) col_sum(0, j) += g(i, j);
        add_adj(n.rhs, col_sum);
        break;
      }
      case Op::Tanh: {
        Matrix d(g.rows(), g.cols());
        for (std::size_t i = 0; i < d.size(); ++i) {
          const double y = n.value.data()[i];
          d.data()[i] = g.data()[i] * (1.0 - y * y);
        }
        add_adj(n.lhs, d);
        break;
      }
      case Op::Sigmoid: {
        Matrix d(g.rows(), g.cols());
        for (std::size_t i = 0; i < d.size(); ++i) {
          const double y = n.value.data()[i];
          d.data()[i] = g.data()[i] * y * (1.0 - y);
        }
        add_adj(n.lhs, d);
        break;
      }
      case Op::Relu: {
        const Matrix& x = nodes_[n.lhs].value;
        Matrix d(g.rows(), g.cols());
        for (std::size_t i = 0; i < d.size(); ++i) d.data()[i] = x.data()[i] > 0.0 ? g.data()[i] : 0.0;
        add_adj(n.lhs, d);
        break;
      }
      case Op::Multiply: {
        const Matrix& a = nodes_[n.lhs].value;
        const Matrix& b = nodes_[n.rhs].value;
        Matrix da(g.rows(), g.cols());
        Matrix db(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.size(); ++i) {
          da.data()[i] = g.data()[i] * b.data()[i];
          db.data()[i] = g.data()[i] * a.data()[i];
        }
        add_adj(n.lhs, da);
        add_adj(n.rhs, db);
        break;
      }
      case Op::Square: {
        const Matrix& x = nodes_[n.lhs].value;
        Matrix d(g.rows(), g.cols());
        for (std::size_t i = 0; i < d.size(); ++i) d.data()[i] = 2.0 * x.data()[i] * g.data()[i];
        add_adj(n.lhs, d);
        break;
      }
      case Op::Mean: {
        const Matrix& x = nodes_[n.lhs].value;
        add_adj(n.lhs, Matrix(x.rows(), x.cols(), g(0, 0) / static_cast<double>(x.size())));
        break;
      }
    }
  }

  // Parameters that exist on the tape but do not influence the root get zeros.
  for (const Node& n : nodes_) {
    if (n.op == Op::Parameter && !grads.contains(n.id)) {
      grads.emplace(n.id, Matrix(n.value.rows(), n.value.cols()));
    }
  }
  return grads;
}

}  // namespace flowcausal::numkit

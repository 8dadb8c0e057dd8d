#pragma once

// Minimal reverse-mode tape over dense Eigen matrices. Nodes are appended
// in evaluation order, so a reverse sweep is a valid topological order.

#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "kgmem/errors.hpp"

namespace kgmem {

template <typename Scalar>
class Tape {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Index = Eigen::Index;

  struct Var {
    std::size_t id = 0;
  };

  // One (row, col) entry of a matrix compared against a fixed target.
  struct SquaredTerm {
    Index row = 0;
    Index col = 0;
    Scalar target = 0;
    Scalar weight = 1;
  };

  const Matrix& value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.external ? *n.external : n.value;
  }
  const Matrix& grad(Var v) const { return nodes_[v.id].grad; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Matrix v) { return push(std::move(v), nullptr); }

  // Leaf bound to an external tensor; its gradient is added to `sink` by
  // backward() when `sink` is non-null. `v` must outlive the tape.
  Var parameter(const Matrix& v, Matrix* sink) {
    Node n;
    n.external = &v;
    n.sink = sink;
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
  }

  Var matmul(Var a, Var b) {
    check(value(a).cols() == value(b).rows(), "matmul shape mismatch");
    Var out = push(value(a) * value(b), nullptr);
    set_backward(out, [a, b](Tape& t, const Matrix& g) {
      t.acc(a) += g * t.value(b).transpose();
      t.acc(b) += t.value(a).transpose() * g;
    });
    return out;
  }

  // c * x with a constant left factor.
  Var left_multiply(Matrix c, Var x) {
    check(c.cols() == value(x).rows(), "left_multiply shape mismatch");
    Var out = push(c * value(x), nullptr);
    set_backward(out, [c = std::move(c), x](Tape& t, const Matrix& g) {
      t.acc(x) += c.transpose() * g;
    });
    return out;
  }

  Var add(Var a, Var b) {
    check(same_shape(a, b), "add shape mismatch");
    Var out = push(value(a) + value(b), nullptr);
    set_backward(out, [a, b](Tape& t, const Matrix& g) {
      t.acc(a) += g;
      t.acc(b) += g;
    });
    return out;
  }

  Var sub(Var a, Var b) {
    check(same_shape(a, b), "sub shape mismatch");
    Var out = push(value(a) - value(b), nullptr);
    set_backward(out, [a, b](Tape& t, const Matrix& g) {
      t.acc(a) += g;
      t.acc(b) -= g;
    });
    return out;
  }

  // x + row broadcast over every row of x.
  Var add_row(Var x, Var row) {
    check(value(row).rows() == 1 && value(row).cols() == value(x).cols(), "add_row shape");
    Matrix y = value(x);
    y.rowwise() += value(row).row(0);
    Var out = push(std::move(y), nullptr);
    set_backward(out, [x, row](Tape& t, const Matrix& g) {
      t.acc(x) += g;
      t.acc(row) += g.colwise().sum();
    });
    return out;
  }

  Var relu(Var x) {
    Var out = push(value(x).cwiseMax(Scalar(0)), nullptr);
    set_backward(out, [x](Tape& t, const Matrix& g) {
      t.acc(x) += (t.value(x).array() > Scalar(0)).select(g, Scalar(0)).matrix();
    });
    return out;
  }

  Var gather_rows(Var x, std::vector<Index> rows) {
    const Matrix& src = value(x);
    Matrix y(static_cast<Index>(rows.size()), src.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      check(rows[i] >= 0 && rows[i] < src.rows(), "gather_rows index out of range");
      y.row(static_cast<Index>(i)) = src.row(rows[i]);
    }
    Var out = push(std::move(y), nullptr);
    set_backward(out, [x, rows = std::move(rows)](Tape& t, const Matrix& g) {
      auto& dx = t.acc(x);
      for (std::size_t i = 0; i < rows.size(); ++i) dx.row(rows[i]) += g.row(static_cast<Index>(i));
    });
    return out;
  }

  Var concat_cols(Var a, Var b) {
    check(value(a).rows() == value(b).rows(), "concat_cols row mismatch");
    const Index ca = value(a).cols();
    Matrix y(value(a).rows(), ca + value(b).cols());
    y << value(a), value(b);
    Var out = push(std::move(y), nullptr);
    set_backward(out, [a, b, ca](Tape& t, const Matrix& g) {
      t.acc(a) += g.leftCols(ca);
      t.acc(b) += g.rightCols(g.cols() - ca);
    });
    return out;
  }

  Var concat_rows(std::span<const Var> parts) {
    check(!parts.empty(), "concat_rows of nothing");
    const Index cols = value(parts[0]).cols();
    Index rows = 0;
    for (Var p : parts) {
      check(value(p).cols() == cols, "concat_rows column mismatch");
      rows += value(p).rows();
    }
    Matrix y(rows, cols);
    Index at = 0;
    for (Var p : parts) {
      y.middleRows(at, value(p).rows()) = value(p);
      at += value(p).rows();
    }
    Var out = push(std::move(y), nullptr);
    std::vector<Var> ps(parts.begin(), parts.end());
    set_backward(out, [ps = std::move(ps)](Tape& t, const Matrix& g) {
      Index at = 0;
      for (Var p : ps) {
        const Index r = t.value(p).rows();
        t.acc(p) += g.middleRows(at, r);
        at += r;
      }
    });
    return out;
  }

  // Row `row` of x reshaped row-major into rows x cols.
  Var reshape_row(Var x, Index row, Index rows, Index cols) {
    check(value(x).cols() == rows * cols, "reshape_row size mismatch");
    Matrix y(rows, cols);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) y(i, j) = value(x)(row, i * cols + j);
    Var out = push(std::move(y), nullptr);
    set_backward(out, [x, row, rows, cols](Tape& t, const Matrix& g) {
      auto& dx = t.acc(x);
      for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) dx(row, i * cols + j) += g(i, j);
    });
    return out;
  }

  Var mean_rows(Var x) {
    const Index n = value(x).rows();
    check(n > 0, "mean_rows of an empty matrix");
    Var out = push(value(x).colwise().mean(), nullptr);
    set_backward(out, [x, n](Tape& t, const Matrix& g) {
      t.acc(x).rowwise() += g.row(0) / static_cast<Scalar>(n);
    });
    return out;
  }

  // sum_k weight_k * (x(row_k, col_k) - target_k)^2 as a 1x1 matrix.
  Var squared_error(Var x, std::vector<SquaredTerm> terms) {
    Scalar total = 0;
    for (const auto& term : terms) {
      const Scalar e = value(x)(term.row, term.col) - term.target;
      total += term.weight * e * e;
    }
    Matrix y(1, 1);
    y(0, 0) = total;
    Var out = push(std::move(y), nullptr);
    set_backward(out, [x, terms = std::move(terms)](Tape& t, const Matrix& g) {
      auto& dx = t.acc(x);
      for (const auto& term : terms) {
        const Scalar e = t.value(x)(term.row, term.col) - term.target;
        dx(term.row, term.col) += g(0, 0) * Scalar(2) * term.weight * e;
      }
    });
    return out;
  }

  // Propagates d(root)/d(node) for every node and flushes leaf gradients
  // into their sinks. `root` must be 1x1.
  void backward(Var root) {
    check(value(root).size() == 1, "backward root must be scalar");
    for (std::size_t i = 0; i <= root.id; ++i) {
      const Matrix& v = value(Var{i});
      nodes_[i].grad.setZero(v.rows(), v.cols());
    }
    nodes_[root.id].grad(0, 0) = Scalar(1);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward) n.backward(*this, n.grad);
      if (n.sink) *n.sink += n.grad;
    }
  }

 private:
  struct Node {
    Matrix value;
    const Matrix* external = nullptr;
    Matrix grad;
    Matrix* sink = nullptr;
    std::function<void(Tape&, const Matrix&)> backward;
  };

  static void check(bool ok, const char* what) {
    if (!ok) throw UsageError(what);
  }

  bool same_shape(Var a, Var b) const {
    return value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols();
  }

  Var push(Matrix v, Matrix* sink) {
    Node n;
    n.value = std::move(v);
    n.sink = sink;
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
  }

  template <class F>
  void set_backward(Var v, F&& f) {
    nodes_[v.id].backward = std::forward<F>(f);
  }

  Matrix& acc(Var v) { return nodes_[v.id].grad; }

  std::vector<Node> nodes_;
};

}  // namespace kgmem

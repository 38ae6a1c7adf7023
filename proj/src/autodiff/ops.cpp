// Copyright (c) 2026 The hmcvi Authors
// SPDX-License-Identifier: Apache-2.0

#include "hmcvi/autodiff/ops.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace hmcvi::ad {

namespace {

using Node = Tape::Node;

Tape& same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw std::logic_error("operands live on different tapes");
  return a.tape();
}

Index broadcast_extent(Index x, Index y, const char* what) {
  if (x == y || y == 1) return x;
  if (x == 1) return y;
  std::ostringstream os;
  os << "incompatible " << what << " extents " << x << " and " << y;
  throw std::invalid_argument(os.str());
}

std::pair<Index, Index> broadcast_shape(const Matrix& a, const Matrix& b) {
  return {broadcast_extent(a.rows(), b.rows(), "row"),
          broadcast_extent(a.cols(), b.cols(), "column")};
}

// Returns a reference to `m` when it already has the target shape, otherwise
// fills `scratch` with the broadcast copy.
const Matrix& expanded(const Matrix& m, Index r, Index c, Matrix& scratch) {
  if (m.rows() == r && m.cols() == c) return m;
  scratch = broadcast_to(m, r, c);
  return scratch;
}

Var unary(const Var& a, Op op, Matrix value) {
  Node n;
  n.op = op;
  n.parents[0] = a.id();
  n.value = std::move(value);
  return a.tape().push(std::move(n));
}

Var binary(const Var& a, const Var& b, Op op, Matrix value) {
  Tape& t = same_tape(a, b);
  Node n;
  n.op = op;
  n.parents[0] = a.id();
  n.parents[1] = b.id();
  n.value = std::move(value);
  return t.push(std::move(n));
}

void check_positive(const Matrix& m, const char* op) {
  for (Index j = 0; j < m.cols(); ++j) {
    for (Index i = 0; i < m.rows(); ++i) {
      if (m(i, j) <= 0.0) {
        std::ostringstream os;
        os << op << " of non-positive value " << m(i, j) << " at (" << i << ", " << j << ")";
        throw std::domain_error(os.str());
      }
    }
  }
}

}  // namespace

Matrix broadcast_to(const Matrix& m, Index rows, Index cols) {
  if (m.rows() == rows && m.cols() == cols) return m;
  if (m.rows() == 1 && m.cols() == 1) return Matrix::Constant(rows, cols, m(0, 0));
  if (m.rows() == 1 && m.cols() == cols) return m.replicate(rows, 1);
  if (m.cols() == 1 && m.rows() == rows) return m.replicate(1, cols);
  std::ostringstream os;
  os << "cannot broadcast " << m.rows() << "x" << m.cols() << " to " << rows << "x" << cols;
  throw std::invalid_argument(os.str());
}

Matrix reduce_to(const Matrix& g, Index rows, Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && cols == 1) return Matrix::Constant(1, 1, g.sum());
  if (rows == 1 && cols == g.cols()) return g.colwise().sum();
  if (cols == 1 && rows == g.rows()) return g.rowwise().sum();
  std::ostringstream os;
  os << "cannot reduce " << g.rows() << "x" << g.cols() << " to " << rows << "x" << cols;
  throw std::invalid_argument(os.str());
}

Var add(const Var& a, const Var& b) {
  const auto [r, c] = broadcast_shape(a.value(), b.value());
  Matrix sa, sb;
  const Matrix& x = expanded(a.value(), r, c, sa);
  const Matrix& y = expanded(b.value(), r, c, sb);
  return binary(a, b, Op::add, x + y);
}

Var sub(const Var& a, const Var& b) {
  const auto [r, c] = broadcast_shape(a.value(), b.value());
  Matrix sa, sb;
  const Matrix& x = expanded(a.value(), r, c, sa);
  const Matrix& y = expanded(b.value(), r, c, sb);
  return binary(a, b, Op::sub, x - y);
}

Var mul(const Var& a, const Var& b) {
  const auto [r, c] = broadcast_shape(a.value(), b.value());
  Matrix sa, sb;
  const Matrix& x = expanded(a.value(), r, c, sa);
  const Matrix& y = expanded(b.value(), r, c, sb);
  return binary(a, b, Op::mul, x.cwiseProduct(y));
}

Var neg(const Var& a) { return unary(a, Op::neg, -a.value()); }

Var exp(const Var& a) { return unary(a, Op::exp, a.value().array().exp().matrix()); }

Var log(const Var& a) {
  check_positive(a.value(), "log");
  return unary(a, Op::log, a.value().array().log().matrix());
}

Var sqrt(const Var& a) {
  check_positive(a.value(), "sqrt");
  return unary(a, Op::sqrt, a.value().array().sqrt().matrix());
}

Var tanh(const Var& a) { return unary(a, Op::tanh, a.value().array().tanh().matrix()); }

Var sigmoid(const Var& a) {
  Matrix v = a.value().unaryExpr([](double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  return unary(a, Op::sigmoid, std::move(v));
}

Var softplus(const Var& a) {
  Matrix v = a.value().unaryExpr([](double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  });
  return unary(a, Op::softplus, std::move(v));
}

Var relu(const Var& a) { return unary(a, Op::relu, a.value().cwiseMax(0.0)); }

Var matmul(const Var& x, const Var& w) {
  if (x.cols() != w.rows()) {
    std::ostringstream os;
    os << "matmul: " << x.rows() << "x" << x.cols() << " times " << w.rows() << "x" << w.cols();
    throw std::invalid_argument(os.str());
  }
  Matrix v = x.value() * w.value();
  return binary(x, w, Op::matmul, std::move(v));
}

Var matmul_t(const Var& x, const Var& w) {
  if (x.cols() != w.cols()) {
    std::ostringstream os;
    os << "matmul_t: " << x.rows() << "x" << x.cols() << " times transpose of " << w.rows()
       << "x" << w.cols();
    throw std::invalid_argument(os.str());
  }
  Matrix v = x.value() * w.value().transpose();
  return binary(x, w, Op::matmul_t, std::move(v));
}

Var dot_rows(const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("dot_rows: shape mismatch");
  }
  Matrix v = a.value().cwiseProduct(b.value()).rowwise().sum();
  return binary(a, b, Op::dot_rows, std::move(v));
}

Var sum_rows(const Var& a) { return unary(a, Op::sum_rows, a.value().rowwise().sum()); }

Var sum_all(const Var& a) {
  return unary(a, Op::sum_all, Matrix::Constant(1, 1, a.value().sum()));
}

Var mean_all(const Var& a) {
  return sum_all(a) * (1.0 / static_cast<double>(a.value().size()));
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Tape& t = parts.front().tape();
  Index rows = 1;
  Index cols = 0;
  for (const Var& p : parts) {
    if (&p.tape() != &t) throw std::logic_error("operands live on different tapes");
    rows = broadcast_extent(rows, p.rows(), "row");
    cols += p.cols();
  }
  Node n;
  n.op = Op::concat_cols;
  n.value.resize(rows, cols);
  Index col = 0;
  for (const Var& p : parts) {
    n.value.middleCols(col, p.cols()) = broadcast_to(p.value(), rows, p.cols());
    col += p.cols();
    n.inputs.push_back(p.id());
  }
  return t.push(std::move(n));
}

Var slice_cols(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw std::out_of_range("slice_cols out of range");
  }
  Node n;
  n.op = Op::slice_cols;
  n.parents[0] = a.id();
  n.offset = start;
  n.value = a.value().middleCols(start, count);
  return a.tape().push(std::move(n));
}

Var select(const Matrix& mask, const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  auto [r, c] = broadcast_shape(a.value(), b.value());
  r = broadcast_extent(r, mask.rows(), "row");
  c = broadcast_extent(c, mask.cols(), "column");
  Matrix sa, sb, sm;
  const Matrix& x = expanded(a.value(), r, c, sa);
  const Matrix& y = expanded(b.value(), r, c, sb);
  const Matrix& m = expanded(mask, r, c, sm);
  Node n;
  n.op = Op::select;
  n.parents[0] = a.id();
  n.parents[1] = b.id();
  n.aux = (mask.array() != 0.0).cast<double>().matrix();
  n.value = (m.array() != 0.0).select(x, y);
  return t.push(std::move(n));
}

Var clamp(const Var& a, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lo > hi");
  Node n;
  n.op = Op::clamp;
  n.parents[0] = a.id();
  n.lo = lo;
  n.hi = hi;
  n.value = a.value().cwiseMax(lo).cwiseMin(hi);
  return a.tape().push(std::move(n));
}

Var operator+(const Var& a, const Var& b) { return add(a, b); }
Var operator-(const Var& a, const Var& b) { return sub(a, b); }
Var operator*(const Var& a, const Var& b) { return mul(a, b); }
Var operator-(const Var& a) { return neg(a); }
Var operator+(const Var& a, double b) { return add(a, a.tape().constant(b)); }
Var operator+(double a, const Var& b) { return add(b.tape().constant(a), b); }
Var operator-(const Var& a, double b) { return sub(a, a.tape().constant(b)); }
Var operator-(double a, const Var& b) { return sub(b.tape().constant(a), b); }
Var operator*(const Var& a, double b) { return mul(a, a.tape().constant(b)); }
Var operator*(double a, const Var& b) { return mul(b.tape().constant(a), b); }

}  // namespace hmcvi::ad

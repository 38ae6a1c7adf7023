// Copyright (c) 2026 The hmcvi Authors
// SPDX-License-Identifier: Apache-2.0

#include "hmcvi/autodiff/tape.hpp"

#include "hmcvi/autodiff/ops.hpp"
#include "hmcvi/autodiff/param_store.hpp"

#include <stdexcept>

namespace hmcvi::ad {

const char* op_name(Op op) {
  switch (op) {
    case Op::constant: return "constant";
    case Op::variable: return "variable";
    case Op::param: return "param";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::neg: return "neg";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::sqrt: return "sqrt";
    case Op::tanh: return "tanh";
    case Op::sigmoid: return "sigmoid";
    case Op::softplus: return "softplus";
    case Op::relu: return "relu";
    case Op::matmul: return "matmul";
    case Op::matmul_t: return "matmul_t";
    case Op::dot_rows: return "dot_rows";
    case Op::sum_rows: return "sum_rows";
    case Op::sum_all: return "sum_all";
    case Op::concat_cols: return "concat_cols";
    case Op::slice_cols: return "slice_cols";
    case Op::select: return "select";
    case Op::clamp: return "clamp";
  }
  return "?";
}

const Matrix& Var::value() const { return tape_->value(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) {
    throw std::logic_error("Var::scalar on a " + std::to_string(v.rows()) + "x" +
                           std::to_string(v.cols()) + " node");
  }
  return v(0, 0);
}

Var Tape::push(Node node) {
  if (node.op != Op::variable && node.op != Op::param) {
    node.requires_grad = false;
    for (int p : node.parents) {
      if (p >= 0 && nodes_[p].requires_grad) node.requires_grad = true;
    }
    for (int p : node.inputs) {
      if (nodes_[p].requires_grad) node.requires_grad = true;
    }
  }
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(Matrix value) {
  Node n;
  n.op = Op::constant;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

Var Tape::variable(Matrix value) {
  Node n;
  n.op = Op::variable;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::param(const std::string& name) {
  if (auto it = param_ids_.find(name); it != param_ids_.end()) return Var(this, it->second);
  if (params_ == nullptr) throw std::logic_error("tape has no parameter store (wanted " + name + ")");
  Node n;
  n.op = Op::param;
  n.value = params_->value(name);
  n.requires_grad = !params_->entry(name).frozen;
  Var v = push(std::move(n));
  param_ids_[name] = v.id();
  return v;
}

Matrix Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Gradients Tape::param_grads() const {
  Gradients out;
  for (const auto& [name, id] : param_ids_) {
    if (!nodes_[id].requires_grad) continue;
    out[name] = grad(Var(const_cast<Tape*>(this), id));
  }
  return out;
}

void Tape::accumulate(int id, const Matrix& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(const Var& root) {
  if (backward_done_) throw std::logic_error("Tape::backward called twice");
  if (root.rows() != 1 || root.cols() != 1) throw std::logic_error("backward root must be 1x1");
  backward_done_ = true;
  if (!nodes_[root.id()].requires_grad) return;
  nodes_[root.id()].grad = Matrix::Ones(1, 1);
  for (int id = root.id(); id >= 0; --id) {
    const Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    backward_node(id);
  }
}

namespace {

bool wants(const std::deque<Tape::Node>& nodes, int id) {
  return id >= 0 && nodes[id].requires_grad;
}

}  // namespace

void Tape::backward_node(int id) {
  // Copy what we need: accumulate() may touch other nodes but never resizes the vector.
  const Node& n = nodes_[id];
  const Matrix& g = n.grad;
  const int a = n.parents[0];
  const int b = n.parents[1];
  auto shape = [&](int p) { return std::pair{nodes_[p].value.rows(), nodes_[p].value.cols()}; };

  switch (n.op) {
    case Op::constant:
    case Op::variable:
    case Op::param:
      return;
    case Op::add: {
      if (wants(nodes_, a)) accumulate(a, reduce_to(g, shape(a).first, shape(a).second));
      if (wants(nodes_, b)) accumulate(b, reduce_to(g, shape(b).first, shape(b).second));
      return;
    }
    case Op::sub: {
      if (wants(nodes_, a)) accumulate(a, reduce_to(g, shape(a).first, shape(a).second));
      if (wants(nodes_, b)) accumulate(b, -reduce_to(g, shape(b).first, shape(b).second));
      return;
    }
    case Op::mul: {
      const Index r = g.rows(), c = g.cols();
      if (wants(nodes_, a)) {
        Matrix gb = g.cwiseProduct(broadcast_to(nodes_[b].value, r, c));
        accumulate(a, reduce_to(gb, shape(a).first, shape(a).second));
      }
      if (wants(nodes_, b)) {
        Matrix ga = g.cwiseProduct(broadcast_to(nodes_[a].value, r, c));
        accumulate(b, reduce_to(ga, shape(b).first, shape(b).second));
      }
      return;
    }
    case Op::neg:
      accumulate(a, -g);
      return;
    case Op::exp:
      accumulate(a, g.cwiseProduct(n.value));
      return;
    case Op::log:
      accumulate(a, g.cwiseQuotient(nodes_[a].value));
      return;
    case Op::sqrt:
      accumulate(a, (0.5 * g.array() / n.value.array()).matrix());
      return;
    case Op::tanh:
      accumulate(a, (g.array() * (1.0 - n.value.array().square())).matrix());
      return;
    case Op::sigmoid:
      accumulate(a, (g.array() * n.value.array() * (1.0 - n.value.array())).matrix());
      return;
    case Op::softplus: {
      const auto& x = nodes_[a].value.array();
      Matrix s = (1.0 / (1.0 + (-x).exp())).matrix();
      accumulate(a, g.cwiseProduct(s));
      return;
    }
    case Op::relu: {
      Matrix m = (nodes_[a].value.array() > 0.0).cast<double>().matrix();
      accumulate(a, g.cwiseProduct(m));
      return;
    }
    case Op::matmul: {
      if (wants(nodes_, a)) accumulate(a, g * nodes_[b].value.transpose());
      if (wants(nodes_, b)) accumulate(b, nodes_[a].value.transpose() * g);
      return;
    }
    case Op::matmul_t: {
      if (wants(nodes_, a)) accumulate(a, g * nodes_[b].value);
      if (wants(nodes_, b)) accumulate(b, g.transpose() * nodes_[a].value);
      return;
    }
    case Op::dot_rows: {
      const Eigen::ArrayXd gc = g.col(0).array();
      if (wants(nodes_, a)) {
        accumulate(a, (nodes_[b].value.array().colwise() * gc).matrix());
      }
      if (wants(nodes_, b)) {
        accumulate(b, (nodes_[a].value.array().colwise() * gc).matrix());
      }
      return;
    }
    case Op::sum_rows: {
      const auto [r, c] = shape(a);
      accumulate(a, g.col(0).replicate(1, c));
      (void)r;
      return;
    }
    case Op::sum_all: {
      const auto [r, c] = shape(a);
      accumulate(a, Matrix::Constant(r, c, g(0, 0)));
      return;
    }
    case Op::concat_cols: {
      Index col = 0;
      for (int p : n.inputs) {
        const Index w = nodes_[p].value.cols();
        if (wants(nodes_, p)) {
          accumulate(p, reduce_to(g.middleCols(col, w), nodes_[p].value.rows(), w));
        }
        col += w;
      }
      return;
    }
    case Op::slice_cols: {
      const auto [r, c] = shape(a);
      Matrix ga = Matrix::Zero(r, c);
      ga.middleCols(n.offset, g.cols()) = g;
      accumulate(a, ga);
      return;
    }
    case Op::select: {
      const Index r = g.rows(), c = g.cols();
      const Matrix m = broadcast_to(n.aux, r, c);
      if (wants(nodes_, a)) {
        accumulate(a, reduce_to(g.cwiseProduct(m), shape(a).first, shape(a).second));
      }
      if (wants(nodes_, b)) {
        Matrix inv = (1.0 - m.array()).matrix();
        accumulate(b, reduce_to(g.cwiseProduct(inv), shape(b).first, shape(b).second));
      }
      return;
    }
    case Op::clamp: {
      const auto& x = nodes_[a].value.array();
      Matrix inside = ((x >= n.lo) && (x <= n.hi)).cast<double>().matrix();
      accumulate(a, g.cwiseProduct(inside));
      return;
    }
  }
}

}  // namespace hmcvi::ad

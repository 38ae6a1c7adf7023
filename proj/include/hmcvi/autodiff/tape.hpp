// Copyright (c) 2026 The hmcvi Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation on a linear tape.
//
// Every node holds a dense matrix. Rows index independent samples (chains,
// data points) and columns index features, so one tape evaluates a whole
// minibatch. Nodes are appended in evaluation order, which is therefore a
// valid topological order; backward() walks the tape in reverse.

#ifndef HMCVI_AUTODIFF_TAPE_HPP_
#define HMCVI_AUTODIFF_TAPE_HPP_

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <vector>

namespace hmcvi::ad {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

class ParamStore;
class Tape;

enum class Op : std::uint8_t {
  constant,
  variable,
  param,
  add,
  sub,
  mul,
  neg,
  exp,
  log,
  sqrt,
  tanh,
  sigmoid,
  softplus,
  relu,
  matmul,    // X W      (B x in) (in x out)
  matmul_t,  // X W^T    (B x out) (in x out)
  dot_rows,  // per-row inner product -> B x 1
  sum_rows,  // per-row sum -> B x 1
  sum_all,   // -> 1 x 1
  concat_cols,
  slice_cols,
  select,
  clamp,
};

const char* op_name(Op op);

/// Handle to a node on a tape. Cheap to copy; only valid while its tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  int id() const { return id_; }

  const Matrix& value() const;
  /// Value of a 1x1 node.
  double scalar() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

using Gradients = std::map<std::string, Matrix>;

class Tape {
 public:
  /// `params` may be null when the graph has no learnable parameters.
  explicit Tape(const ParamStore* params = nullptr) : params_(params) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var constant(double value);
  /// Leaf whose gradient is tracked (an "input" of the graph).
  Var variable(Matrix value);
  /// Leaf bound to a named parameter; created once per tape.
  Var param(const std::string& name);
  bool has_params() const { return params_ != nullptr; }
  const ParamStore* params() const { return params_; }

  /// Seeds d(root)/d(root) = 1 and accumulates adjoints. `root` must be 1x1.
  /// May be called once per tape.
  void backward(const Var& root);

  /// Adjoint of a node after backward(); zero matrix if the node was not reached.
  Matrix grad(const Var& v) const;
  /// Gradients of every parameter that was bound on this tape.
  Gradients param_grads() const;

  std::size_t size() const { return nodes_.size(); }
  Op op(const Var& v) const { return nodes_[v.id()].op; }
  bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }

  const Matrix& value(int id) const { return nodes_[id].value; }

  // Node construction; used by the op functions in ops.hpp.
  struct Node {
    Matrix value;
    Matrix grad;
    Op op = Op::constant;
    bool requires_grad = false;
    std::array<int, 3> parents{-1, -1, -1};
    // Op-specific extras: clamp bounds, slice offset, select mask, concat widths.
    double lo = 0.0;
    double hi = 0.0;
    Index offset = 0;
    Matrix aux;
    std::vector<int> inputs;
  };
  Var push(Node node);
  const Node& node(int id) const { return nodes_[id]; }

 private:
  void accumulate(int id, const Matrix& g);
  void backward_node(int id);

  const ParamStore* params_;
  // A deque keeps references to existing nodes valid while new ones are pushed.
  std::deque<Node> nodes_;
  std::map<std::string, int> param_ids_;
  bool backward_done_ = false;
};

}  // namespace hmcvi::ad

#endif  // HMCVI_AUTODIFF_TAPE_HPP_

// Copyright (c) 2026 The hmcvi Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef HMCVI_AUTODIFF_OPS_HPP_
#define HMCVI_AUTODIFF_OPS_HPP_

#include "hmcvi/autodiff/tape.hpp"

#include <initializer_list>
#include <vector>

namespace hmcvi::ad {

// Elementwise binary ops broadcast an operand whose extent is 1 along a
// dimension: scalars (1x1), row vectors (1xn) and column vectors (Bx1).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);

Var exp(const Var& a);
/// Throws std::domain_error if any entry is <= 0.
Var log(const Var& a);
/// Throws std::domain_error if any entry is <= 0.
Var sqrt(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
/// log(1 + exp(a)), evaluated without overflow.
Var softplus(const Var& a);
/// Derivative at 0 is taken as 0.
Var relu(const Var& a);

/// Row-wise matrix-vector products: x is B x in, w is in x out.
Var matmul(const Var& x, const Var& w);
/// Products with the transposed weight: x is B x out, w is in x out.
Var matmul_t(const Var& x, const Var& w);
/// Per-row inner product of two B x n nodes.
Var dot_rows(const Var& a, const Var& b);
Var sum_rows(const Var& a);
Var sum_all(const Var& a);
Var mean_all(const Var& a);

Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(const Var& a, Index start, Index count);

/// Picks `a` where mask != 0 and `b` elsewhere. The mask is data, not a node;
/// it may be B x 1 (whole rows) or match the result shape.
Var select(const Matrix& mask, const Var& a, const Var& b);
/// Clips into [lo, hi]; the derivative is 1 inside and 0 outside.
Var clamp(const Var& a, double lo, double hi);

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator-(const Var& a);
Var operator+(const Var& a, double b);
Var operator+(double a, const Var& b);
Var operator-(const Var& a, double b);
Var operator-(double a, const Var& b);
Var operator*(const Var& a, double b);
Var operator*(double a, const Var& b);

/// Square of each entry (mul(a, a)).
inline Var square(const Var& a) { return mul(a, a); }

/// Broadcast `m` to rows x cols following the elementwise rules above.
Matrix broadcast_to(const Matrix& m, Index rows, Index cols);
/// Sum `g` down to rows x cols, the adjoint of broadcast_to.
Matrix reduce_to(const Matrix& g, Index rows, Index cols);

}  // namespace hmcvi::ad

#endif  // HMCVI_AUTODIFF_OPS_HPP_

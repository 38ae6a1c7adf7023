// Copyright (c) 2026 The hmcvi Authors
// SPDX-License-Identifier: Apache-2.0
//
// Leapfrog integration of Hamilton's equations with a diagonal mass matrix,
// K(v) = v^T M^{-1} v / 2.
//
// Step order, per leapfrog step n:
//   v' = v - (eps/2) * gradU(z)
//   z  = z + eps * (M^{-1} v')
//   v  = v' - (eps/2) * gradU(z)
// The two half kicks between consecutive steps are applied one after the
// other; fusing only reuses gradU at the shared position. L steps therefore
// reproduce L single-step calls bit for bit.

#ifndef HMCVI_LEAPFROG_LEAPFROG_HPP_
#define HMCVI_LEAPFROG_LEAPFROG_HPP_

#include "hmcvi/potential/potential.hpp"

#include <iosfwd>
#include <stdexcept>
#include <vector>

namespace hmcvi::leapfrog {

using ad::Matrix;
using ad::Tape;
using ad::Var;
using potential::Potential;
using potential::Vector;

/// Coordinates beyond this magnitude count as a diverged trajectory.
inline constexpr double kDivergenceBound = 1e8;

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, int step, Eigen::Index row)
      : std::runtime_error(what), step_(step), row_(row) {}
  int step() const { return step_; }
  Eigen::Index row() const { return row_; }

 private:
  int step_;
  Eigen::Index row_;
};

struct LeapfrogConfig {
  double step_size = 0.1;
  int n_steps = 1;
  void validate() const;
};

struct PhaseState {
  Vector z;
  Vector v;
};

/// Batched phase state on a tape: both B x d.
struct PhaseVars {
  Var z;
  Var v;
};

/// Integrator parameters as nodes so the bound can differentiate through them.
struct Integrator {
  Var step_size;  // 1 x 1, positive
  Var log_mass;   // 1 x d (shared) or B x d (per row): log of diag(M)
  int n_steps = 1;
};

struct HdResult {
  PhaseVars state;
  /// B x 1; 1 where the row crossed kDivergenceBound or went non-finite. Such
  /// rows are held at their last finite state.
  Matrix diverged;
  /// gradU at the final position, for reuse by the next simulation.
  Var gradient;
  bool any_diverged() const { return diverged.size() > 0 && diverged.maxCoeff() > 0.0; }
};

/// Forward simulation. When `freeze_diverged` is false a diverging row throws
/// DivergenceError instead of being frozen. `start_gradient`, if valid, must
/// be gradU(s.z); it saves one gradient evaluation.
HdResult hd(Tape& tape, const Potential& pot, const PhaseVars& s, const Integrator& integ,
            bool freeze_diverged = false, const Var& start_gradient = Var());

/// Backward simulation: negate v, run hd, negate v.
HdResult rev_hd(Tape& tape, const Potential& pot, const PhaseVars& s, const Integrator& integ,
                bool freeze_diverged = false);

/// K(v) per row.
Var kinetic(const Var& v, const Var& log_mass);

// --- numeric conveniences -----------------------------------------------------

/// `mass` is diag(M); an empty vector means the identity.
PhaseState leapfrog_hd(const Potential& pot, const PhaseState& s, const LeapfrogConfig& cfg,
                       const Vector& mass = {});
PhaseState leapfrog_rev_hd(const Potential& pot, const PhaseState& s, const LeapfrogConfig& cfg,
                           const Vector& mass = {});

/// One step in position-update form:
///   z' = z + eps M^{-1} v + (eps^2 / 2) M^{-1} F(z)
///   v' = v + eps (F(z) + F(z')) / 2,  F = -gradU.
/// Kept as an independent cross-check of leapfrog_hd with n_steps = 1.
PhaseState alt_leapfrog_step(const Potential& pot, const PhaseState& s, const LeapfrogConfig& cfg,
                             const Vector& mass = {});

/// Batched numeric form; rows of z and v are independent states.
std::pair<Matrix, Matrix> hd_rows(const Potential& pot, const Matrix& z, const Matrix& v,
                                  const LeapfrogConfig& cfg, const Vector& mass = {});

double kinetic_energy(const Vector& v, const Vector& mass = {});

struct TrajectoryPoint {
  int step = 0;
  Vector z;
  Vector v;
  double potential = 0.0;
  double kinetic = 0.0;
  double hamiltonian() const { return potential + kinetic; }
};

/// The start state and the state after each of cfg.n_steps leapfrog steps.
std::vector<TrajectoryPoint> trajectory(const Potential& pot, const PhaseState& s,
                                        const LeapfrogConfig& cfg, const Vector& mass = {});

/// Columns: step, z1..zd, v1..vd, U, K, H.
void write_trajectory_csv(std::ostream& os, const std::vector<TrajectoryPoint>& points);

}  // namespace hmcvi::leapfrog

#endif  // HMCVI_LEAPFROG_LEAPFROG_HPP_

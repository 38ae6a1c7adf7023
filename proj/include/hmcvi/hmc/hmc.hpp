// Copyright (c) 2026 The hmcvi Authors
// SPDX-License-Identifier: Apache-2.0
//
// HMC transitions with partial momentum updates. One step from s = (z, v):
//   v_samp = sqrt(M) * eta                      eta ~ N(0, I)
//   u      = alpha v + sqrt(1 - alpha^2) v_samp
//   (z', v') = HD(z, u)
//   p_acc  = min(1, exp(H(z, u) - H(z', v')))
//   s_t    = (z', v') if accepted, (z, -u) if rejected
// Without the acceptance step every proposal is taken and s_t = (z', v').

#ifndef HMCVI_HMC_HMC_HPP_
#define HMCVI_HMC_HMC_HPP_

#include "hmcvi/leapfrog/leapfrog.hpp"
#include "hmcvi/rng.hpp"

#include <iosfwd>
#include <optional>
#include <vector>

namespace hmcvi::hmc {

using ad::Matrix;
using ad::Tape;
using ad::Var;
using leapfrog::PhaseState;
using potential::Potential;
using potential::Vector;

enum class MassMode { identity, global, conditioned };

const char* mass_mode_name(MassMode m);
MassMode parse_mass_mode(const std::string& s);

/// Diagonal mass matrix. `diag` holds one row (identity/global) or one row
/// per chain (conditioned); every entry is positive.
struct MassSpec {
  MassMode mode = MassMode::identity;
  Matrix diag;

  static MassSpec identity(int d);
  static MassSpec global(const Vector& diag);
  static MassSpec conditioned(const Matrix& per_row);
  void validate() const;
  Matrix log_diag() const { return diag.array().log().matrix(); }
};

struct HmcConfig {
  int n_hmc = 1;       // T
  int n_leapfrog = 1;  // L
  double step_size = 0.1;
  double alpha = 0.0;
  bool with_acceptance = true;
  void validate() const;
};

/// Kernel quantities as tape nodes so gradients reach them.
struct KernelVars {
  Var step_size;  // 1 x 1
  Var log_mass;   // 1 x d or B x d
  Var alpha;      // 1 x 1
};

/// Constant (non-learned) kernel nodes for a config and mass.
KernelVars constant_kernel(Tape& tape, const HmcConfig& cfg, const MassSpec& mass);

/// Standard normal draws consumed by one batch of chains.
struct ChainNoise {
  Matrix v0;                    // B x d
  std::vector<Matrix> eta;      // per step, B x d
  std::vector<Matrix> uniform;  // per step, B x 1
  int rows() const { return static_cast<int>(v0.rows()); }
  int steps() const { return static_cast<int>(eta.size()); }
};

/// Row i draws, in order, d normals for v0 and then, per step, d normals and
/// one uniform, all from streams[i].
ChainNoise draw_noise(std::vector<Rng>& streams, int d, int n_steps);
/// Convenience: one stream per row seeded from `rng`.
ChainNoise draw_noise(Rng& rng, int rows, int d, int n_steps);

/// One HMC step on the tape.
struct StepVars {
  Var z_prev, v_prev;  // s_{t-1}
  Var v_samp;          // sqrt(M) eta
  Var u;               // partially updated momentum
  Var z_prop, v_prop;  // HD(z_prev, u); the proposal is (z_prop, -v_prop)
  Var h_start, h_prop; // H(z_prev, u), H(z_prop, v_prop), B x 1
  Var p_acc;           // B x 1
  Matrix accepted;     // B x 1 in {0, 1}; data, not differentiated
  Matrix diverged;     // B x 1
  Var z, v;            // s_t
  Var energy;          // U(z), B x 1
  Var gradient;        // gradU(z)
};

struct GraphTrace {
  Var z0, v0;
  Var energy0;  // U(z0)
  std::vector<StepVars> steps;
  bool with_acceptance = true;

  const Var& final_z() const { return steps.empty() ? z0 : steps.back().z; }
  const Var& final_v() const { return steps.empty() ? v0 : steps.back().v; }
  const Var& final_energy() const { return steps.empty() ? energy0 : steps.back().energy; }
};

struct RunOptions {
  /// Per-step acceptance outcomes to impose instead of the uniform draws
  /// (diverged rows are still rejected). Used to freeze a trace.
  const std::vector<Matrix>* forced_accept = nullptr;
  /// Without acceptance a diverging chain normally aborts; with this set it
  /// is frozen and reported in StepVars::diverged instead.
  bool freeze_without_acceptance = false;
  /// Starting momentum to use instead of sqrt(M) * noise.v0.
  Var initial_momentum;
};

/// Runs T = noise.steps() transitions from (z0, sqrt(M) noise.v0).
GraphTrace run_chain_graph(Tape& tape, const Potential& pot, const Var& z0, const KernelVars& kernel,
                           const HmcConfig& cfg, const ChainNoise& noise,
                           const RunOptions& options = {});

// --- numeric records ----------------------------------------------------------

struct StepRecord {
  Matrix z_prev, v_prev, v_samp, u, z_prop, v_prop;
  Matrix h_start, h_prop, p_acc, accepted, diverged;
  Matrix z, v;
};

struct ChainTrace {
  Matrix z0, v0;
  std::vector<StepRecord> steps;
  bool with_acceptance = true;
  // Kernel used, so the trace can be checked on its own.
  double step_size = 0.0;
  int n_leapfrog = 1;
  double alpha = 0.0;
  Matrix log_mass;

  int rows() const { return static_cast<int>(z0.rows()); }
  const Matrix& final_z() const { return steps.empty() ? z0 : steps.back().z; }
  const Matrix& final_v() const { return steps.empty() ? v0 : steps.back().v; }
  /// Mean acceptance per step over rows.
  std::vector<double> acceptance_rates() const;
};

ChainTrace to_record(const GraphTrace& g, const KernelVars& kernel, int n_leapfrog);

struct TraceCheck {
  bool ok = true;
  std::string message;
};

/// Checks that every stored (accepted, s_t) pair satisfies the case equation
/// above and that consecutive steps chain together.
TraceCheck validate_trace(const ChainTrace& trace);

// --- numeric conveniences -----------------------------------------------------

/// sqrt(diag) * eta with eta standard normal.
Vector sample_momentum(const Vector& mass_diag, Rng& rng);
Vector partial_update(const Vector& v_prev, const Vector& v_samp, double alpha);

struct Acceptance {
  double p = 0.0;
  bool diverged = false;
};
/// min(1, exp(h_star - h_tilde)); non-finite energies give p = 0, diverged.
Acceptance accept_prob(double h_star, double h_tilde);
Acceptance accept_prob(const Potential& pot, const PhaseState& s_star, const PhaseState& s_tilde,
                       const Vector& mass_diag);

double hamiltonian(const Potential& pot, const PhaseState& s, const Vector& mass_diag);

/// Single-chain step; returns s_t and the step record.
std::pair<PhaseState, StepRecord> hmc_step(const Potential& pot, const PhaseState& s_prev,
                                           const HmcConfig& cfg, const Vector& mass_diag, Rng& rng);

/// Batch of chains started at the rows of z0.
ChainTrace run_chain(const Potential& pot, const Matrix& z0, const HmcConfig& cfg,
                     const MassSpec& mass, Rng& rng);
ChainTrace run_chain(const Potential& pot, const Matrix& z0, const HmcConfig& cfg,
                     const MassSpec& mass, const ChainNoise& noise, const RunOptions& options = {});

/// Full momentum refresh without the final negation, written directly from
/// the kick-drift-kick equations. Kept as a second route for the alpha = 0
/// case: a rejected step returns (z, u) instead of (z, -u).
struct BasicStep {
  Vector z, v;
  bool accepted = false;
};
BasicStep hmc_step_basic(const Potential& pot, const Vector& z, const Vector& eta, double uniform,
                         const HmcConfig& cfg, const Vector& mass_diag);

struct EnsembleSnapshot {
  int step = 0;
  Matrix z, v;       // rows: live particles
  Matrix z_prev;     // positions before this step (step > 0)
  Matrix u;          // momenta right after resampling (step > 0)
  Vector prev_potential;  // U(z_prev)
  Vector u_kinetic;       // K(u)
  Vector potential;  // U(z) per live particle
  Vector kinetic;    // K(v)
  std::vector<int> particle;  // original particle index of each row
  int excluded = 0;  // particles dropped so far after diverging
  double acceptance_rate = 1.0;
};

/// Snapshots after 0..T steps of an ensemble started at the rows of `initial`.
std::vector<EnsembleSnapshot> simulate_ensemble(const Potential& pot, const Matrix& initial,
                                                const HmcConfig& cfg, const MassSpec& mass,
                                                Rng& rng);

/// Columns: step, particle, z1.., v1.., U, K, H, resample. For each step > 0
/// the resampled state (z_{t-1}, u) is written with resample = 1 before the
/// new state.
void write_ensemble_csv(std::ostream& os, const std::vector<EnsembleSnapshot>& snapshots);

}  // namespace hmcvi::hmc

#endif  // HMCVI_HMC_HMC_HPP_

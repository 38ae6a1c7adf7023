// Copyright (c) 2026 The hmcvi Authors
// SPDX-License-Identifier: Apache-2.0
//
// Auxiliary lower bound over one HMC chain per datum:
//
//   L_aux = log p(x, z_T) - log q0(z0|x) - log f_kin(v0|x) + log r_final(v_T|z_T, x)
//           + sum_t [ reverse_t - forward_t ]
//
//   forward_t = log q_U(u_{t-1}|v_{t-1}) [+ log(I p_acc + (1-I)(1-p_acc))]
//   reverse_t = log r_V(v_{t-1}|z_{t-1}, u_{t-1}, t, x) [+ log(I P1 + (1-I)(1-P1))]
//
// where I is the recorded acceptance indicator and P1 the reverse acceptance
// probability. The bracketed terms are present only with the acceptance step.
// Position delta functions never appear; delta_cancellation_check verifies
// the positional conditions they encode.

#ifndef HMCVI_BOUND_BOUND_HPP_
#define HMCVI_BOUND_BOUND_HPP_

#include "hmcvi/hmc/hmc.hpp"
#include "hmcvi/models/model.hpp"

#include "json.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace hmcvi::bound {

using ad::Matrix;
using ad::Tape;
using ad::Var;
using models::AcceptMode;
using models::Json;
using potential::Vector;

/// Clamp applied to probabilities inside log(p) and log(1 - p) only.
inline constexpr double kProbClamp = 1e-12;

class NonFiniteTerm : public std::runtime_error {
 public:
  explicit NonFiniteTerm(const std::string& term)
      : std::runtime_error("non-finite bound term: " + term), term_(term) {}
  const std::string& term() const { return term_; }

 private:
  std::string term_;
};

class UnsupportedAlpha : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// --- single-step densities (numeric) ----------------------------------------

/// log q_U(u | v_prev) = log f_kin(v_samp) - (d/2) log(1 - alpha^2) with
/// v_samp = (u - alpha v_prev) / sqrt(1 - alpha^2). Empty mass means M = I.
/// Throws UnsupportedAlpha when |alpha| >= 1.
double log_q_u(const Vector& u, const Vector& v_prev, double alpha, const Vector& mass_diag = {});

/// log(I p + (1 - I)(1 - p)) with p clamped to [1e-12, 1 - 1e-12] inside
/// the logarithm. Throws std::domain_error unless 0 <= p <= 1.
double accept_log_term(double p, bool accepted);

/// Per-step densities for one row of a step record.
struct TransitionDensities {
  double q_u_log = 0.0;
  double p_acc = 1.0;
  bool i_acc = true;
  double r_v_log = 0.0;
  double rev_acc_log = 0.0;

  double forward(bool with_acceptance) const;
  double reverse(bool with_acceptance) const;
};

/// P(A = 1 | s_t) from dh = H(revHD(s_t)) - H(s_t): 1 when dh <= 0,
/// otherwise exp(-dh) (simple) or clip(exp(-dh) + correction, 0, 1) (nn).
double reverse_accept_prob(double dh_rev, AcceptMode mode, double nn_correction = 0.0);
/// Same, computing dh by running revHD from s_t. `pot` must describe the
/// datum of s_t alone (a single-row potential).
double reverse_accept_prob(const leapfrog::PhaseState& s_t, const potential::Potential& pot,
                           const leapfrog::LeapfrogConfig& cfg, const Vector& mass_diag,
                           AcceptMode mode, double nn_correction = 0.0);

/// Checks the positional conditions behind the cancelled delta functions:
/// accepted rows (every row without the acceptance step) satisfy
/// |pos(revHD(s_t)) - z_{t-1}|_inf < tol, rejected rows satisfy z_t == z_{t-1}
/// exactly. `pot` carries one datum per trace row.
hmc::TraceCheck delta_cancellation_check(const hmc::ChainTrace& trace,
                                         const potential::Potential& pot, double tol = 1e-8);

// --- entropies ----------------------------------------------------------------

/// Entropy of a diagonal Gaussian with the given log variances.
double gaussian_entropy(const Vector& log_var);
/// Entropy of f_kin = N(0, diag M): (d log 2 pi + log|M| + d) / 2.
double kinetic_entropy(const Vector& log_mass);
/// Closed-form replacement for the sampled -log q0(z0|x) and the T sampled
/// -log f_kin(v_samp|x) terms, plus -log f_kin(v0|x) unless v0 is cancelled.
double entropy_terms(const Vector& q0_log_var, const Vector& log_mass, int n_hmc,
                     bool include_v0 = true);

// --- assembly -------------------------------------------------------------------

struct BoundOptions {
  /// Replace sampled -log q0 and -log f_kin(v_samp) by their entropies.
  bool entropy_shortcut = false;
  /// With alpha fixed at 0, drop -log f_kin(v0) against r_V(v0|...) at t = 1
  /// (or against r_final when T = 0).
  bool cancel_v0 = true;
};

/// Per-row terms as tape nodes, each B x 1.
struct BoundGraph {
  Var l_aux;
  Var log_p_joint;
  Var log_q0;
  Var log_fkin_v0;
  Var log_r_final;
  std::vector<Var> forward;
  std::vector<Var> reverse;
  bool v0_cancelled = false;
  bool entropy_shortcut = false;
  bool with_acceptance = false;
};

/// Batch means of every term.
struct BoundTerms {
  int rows = 0;
  double l_aux = 0.0;
  double log_p_joint = 0.0;
  double log_q0 = 0.0;
  double log_fkin_v0 = 0.0;
  double log_r_final = 0.0;
  std::vector<double> forward;
  std::vector<double> reverse;
  std::vector<double> acceptance_rate;
  bool v0_cancelled = false;
  bool entropy_shortcut = false;
  bool with_acceptance = false;

  /// Recomputes L_aux from the itemized terms.
  double recombined() const;
};

void to_json(Json& j, const BoundTerms& t);

/// Builds L_aux per row from a chain on the tape. Throws NonFiniteTerm naming
/// the first non-finite term.
BoundGraph assemble_bound(Tape& tape, const models::Model& model, const hmc::GraphTrace& chain,
                          const hmc::KernelVars& kernel, const models::GaussianHead& q0,
                          const Var& x, const BoundOptions& options = {});

BoundTerms summarize(const BoundGraph& g, const hmc::GraphTrace& chain);

// --- one batch end to end ---------------------------------------------------------

/// Standard normal draws for a batch: eps for the reparameterized z0 and the
/// chain noise.
struct BatchNoise {
  Matrix eps;  // B x d
  hmc::ChainNoise chain;
};

/// Row i uses make_stream(seed, epoch, index[i], chain): d normals for eps,
/// then the draws documented at hmc::draw_noise.
BatchNoise draw_batch_noise(std::uint64_t seed, std::uint64_t epoch,
                            const std::vector<std::uint64_t>& index, int d, int n_steps);

struct BatchBound {
  models::GaussianHead q0;
  hmc::KernelVars kernel;
  hmc::GraphTrace chain;
  BoundGraph bound;
};

/// z0 = mean + exp(log_var / 2) eps, T HMC steps, then assemble_bound. The
/// tape must bind model.params().
BatchBound bound_on_batch(Tape& tape, const models::Model& model, const potential::Potential& pot,
                          const Matrix& x, const BatchNoise& noise,
                          const BoundOptions& options = {}, const hmc::RunOptions& run = {});

}  // namespace hmcvi::bound

#endif  // HMCVI_BOUND_BOUND_HPP_

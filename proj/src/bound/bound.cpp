// Copyright (c) 2026 The hmcvi Authors
// SPDX-License-Identifier: Apache-2.0

#include "hmcvi/bound/bound.hpp"

#include "hmcvi/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace hmcvi::bound {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kInf = std::numeric_limits<double>::infinity();

Vector mass_or_identity(const Vector& mass, Eigen::Index d) {
  return mass.size() ? mass : Vector::Ones(d);
}

void check_finite(const Var& v, const std::string& name) {
  if (!v.value().allFinite()) throw NonFiniteTerm(name);
}

// log(I p + (1 - I)(1 - p)) per row with p clamped inside the log.
Var accept_log_term(const Var& p, const Matrix& accepted) {
  Var pc = ad::clamp(p, kProbClamp, 1.0 - kProbClamp);
  return ad::log(ad::select(accepted, pc, 1.0 - pc));
}

// Row-wise log q_U on the tape, using the entropy in place of the sampled
// -log f_kin(v_samp) when requested.
Var log_q_u_graph(Tape& tape, const Var& u, const Var& v_prev, const Var& alpha,
                  const Var& log_mass, bool entropy_shortcut) {
  const double d = static_cast<double>(u.cols());
  Var one_minus = 1.0 - ad::square(alpha);
  Var jac = (0.5 * d) * ad::log(one_minus);
  Var log_fkin;
  if (entropy_shortcut) {
    log_fkin = -models::gaussian_entropy(log_mass);
    if (log_fkin.rows() != u.rows()) {
      log_fkin = log_fkin + tape.constant(Matrix::Zero(u.rows(), 1));
    }
  } else {
    Var v_samp = (u - alpha * v_prev) * ad::exp(-0.5 * ad::log(one_minus));
    log_fkin = models::kinetic_log_density(v_samp, log_mass);
  }
  return log_fkin - jac;
}

}  // namespace

double log_q_u(const Vector& u, const Vector& v_prev, double alpha, const Vector& mass_diag) {
  if (!(std::abs(alpha) < 1.0)) {
    throw UnsupportedAlpha("log_q_u: |alpha| >= 1 is a deterministic transition without a density");
  }
  if (u.size() != v_prev.size()) throw std::invalid_argument("log_q_u: dimension mismatch");
  const Vector m = mass_or_identity(mass_diag, u.size());
  const double s = std::sqrt(1.0 - alpha * alpha);
  const Vector v_samp = (u - alpha * v_prev) / s;
  const double d = static_cast<double>(u.size());
  const double log_fkin =
      -0.5 * (d * kLog2Pi + m.array().log().sum() + (v_samp.array().square() / m.array()).sum());
  return log_fkin - 0.5 * d * std::log(1.0 - alpha * alpha);
}

double accept_log_term(double p, bool accepted) {
  if (!(p >= 0.0 && p <= 1.0)) {
    std::ostringstream os;
    os << "acceptance probability " << p << " outside [0, 1]";
    throw std::domain_error(os.str());
  }
  const double pc = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  return accepted ? std::log(pc) : std::log1p(-pc);
}

double TransitionDensities::forward(bool with_acceptance) const {
  return with_acceptance ? q_u_log + accept_log_term(p_acc, i_acc) : q_u_log;
}

double TransitionDensities::reverse(bool with_acceptance) const {
  return with_acceptance ? r_v_log + rev_acc_log : r_v_log;
}

double reverse_accept_prob(double dh_rev, AcceptMode mode, double nn_correction) {
  if (std::isnan(dh_rev)) return 0.0;
  if (dh_rev <= 0.0) return 1.0;
  const double simple = std::exp(-dh_rev);
  switch (mode) {
    case AcceptMode::off:
    case AcceptMode::simple: return simple;
    case AcceptMode::nn: return std::clamp(simple + nn_correction, 0.0, 1.0);
  }
  return simple;
}

double reverse_accept_prob(const leapfrog::PhaseState& s_t, const potential::Potential& pot,
                           const leapfrog::LeapfrogConfig& cfg, const Vector& mass_diag,
                           AcceptMode mode, double nn_correction) {
  const Vector m = mass_or_identity(mass_diag, s_t.z.size());
  double dh;
  try {
    const leapfrog::PhaseState back = leapfrog::leapfrog_rev_hd(pot, s_t, cfg, m);
    dh = hmc::hamiltonian(pot, back, m) - hmc::hamiltonian(pot, s_t, m);
  } catch (const leapfrog::DivergenceError&) {
    dh = kInf;
  } catch (const potential::NonFiniteEnergy&) {
    dh = kInf;
  }
  return reverse_accept_prob(dh, mode, nn_correction);
}

hmc::TraceCheck delta_cancellation_check(const hmc::ChainTrace& trace,
                                         const potential::Potential& pot, double tol) {
  for (std::size_t k = 0; k < trace.steps.size(); ++k) {
    const hmc::StepRecord& s = trace.steps[k];
    auto fail = [&](Eigen::Index i, const std::string& what) {
      std::ostringstream os;
      os << "step " << k + 1 << ", row " << i << ": " << what;
      return hmc::TraceCheck{false, os.str()};
    };
    // Batched revHD so that row i sees datum i and its own mass.
    Tape tape(pot.params());
    const leapfrog::Integrator integ{tape.constant(Matrix::Constant(1, 1, trace.step_size)),
                                     tape.constant(trace.log_mass), trace.n_leapfrog};
    const leapfrog::HdResult back =
        leapfrog::rev_hd(tape, pot, {tape.constant(s.z), tape.constant(s.v)}, integ, true);
    const Matrix& zb = back.state.z.value();
    for (Eigen::Index i = 0; i < s.z.rows(); ++i) {
      if (s.accepted(i, 0) == 1.0) {
        if (back.diverged.size() && back.diverged(i, 0) > 0.0) return fail(i, "revHD diverged");
        const double err = (zb.row(i) - s.z_prev.row(i)).cwiseAbs().maxCoeff();
        if (!(err < tol)) {
          std::ostringstream os;
          os << "accepted state does not lead back to z_{t-1} (error " << err << ")";
          return fail(i, os.str());
        }
      } else if (s.accepted(i, 0) == 0.0) {
        if (!trace.with_acceptance) return fail(i, "rejection recorded without the acceptance step");
        if (s.z.row(i) != s.z_prev.row(i)) return fail(i, "rejected step moved the position");
      } else {
        return fail(i, "acceptance flag is not 0 or 1");
      }
    }
  }
  return {};
}

double gaussian_entropy(const Vector& log_var) {
  return 0.5 * (log_var.array() + kLog2Pi + 1.0).sum();
}

double kinetic_entropy(const Vector& log_mass) { return gaussian_entropy(log_mass); }

double entropy_terms(const Vector& q0_log_var, const Vector& log_mass, int n_hmc,
                     bool include_v0) {
  if (n_hmc < 0) throw std::invalid_argument("entropy_terms: n_hmc < 0");
  const double hk = kinetic_entropy(log_mass);
  return gaussian_entropy(q0_log_var) + hk * (n_hmc + (include_v0 ? 1 : 0));
}

double BoundTerms::recombined() const {
  double sum = log_p_joint - log_q0 - log_fkin_v0 + log_r_final;
  for (std::size_t t = 0; t < forward.size(); ++t) sum += reverse[t] - forward[t];
  return sum;
}

void to_json(Json& j, const BoundTerms& t) {
  j = Json{{"rows", t.rows},
           {"l_aux", t.l_aux},
           {"log_p_joint", t.log_p_joint},
           {"log_q0", t.log_q0},
           {"log_fkin_v0", t.log_fkin_v0},
           {"log_r_final", t.log_r_final},
           {"forward", t.forward},
           {"reverse", t.reverse},
           {"acceptance_rate", t.acceptance_rate},
           {"v0_cancelled", t.v0_cancelled},
           {"entropy_shortcut", t.entropy_shortcut},
           {"with_acceptance", t.with_acceptance}};
}

BoundGraph assemble_bound(Tape& tape, const models::Model& model, const hmc::GraphTrace& chain,
                          const hmc::KernelVars& kernel, const models::GaussianHead& q0,
                          const Var& x, const BoundOptions& options) {
  const models::ModelConfig& cfg = model.config();
  const Eigen::Index rows = chain.z0.rows();
  const int T = static_cast<int>(chain.steps.size());
  Var zero_rows = tape.constant(Matrix::Zero(rows, 1));
  auto per_row = [&](const Var& v) { return v.rows() == rows ? v : v + zero_rows; };

  BoundGraph g;
  g.with_acceptance = chain.with_acceptance;
  g.entropy_shortcut = options.entropy_shortcut;
  g.v0_cancelled = options.cancel_v0 && cfg.merged_reverse();
  if (chain.with_acceptance != cfg.with_acceptance()) {
    throw std::invalid_argument("chain and model disagree on the acceptance step");
  }

  g.log_p_joint = -chain.final_energy();
  check_finite(g.log_p_joint, "log_p_joint");

  g.log_q0 = options.entropy_shortcut ? per_row(-models::gaussian_entropy(q0.log_var))
                                      : models::gaussian_log_density(q0, chain.z0);
  check_finite(g.log_q0, "log_q0");

  if (g.v0_cancelled) {
    g.log_fkin_v0 = zero_rows;
  } else {
    g.log_fkin_v0 = options.entropy_shortcut
                        ? per_row(-models::gaussian_entropy(kernel.log_mass))
                        : models::kinetic_log_density(chain.v0, kernel.log_mass);
  }
  check_finite(g.log_fkin_v0, "log_fkin_v0");

  if (g.v0_cancelled && T == 0) {
    g.log_r_final = zero_rows;
  } else {
    g.log_r_final =
        models::gaussian_log_density(model.final_momentum(tape, chain.final_z(), x), chain.final_v());
  }
  check_finite(g.log_r_final, "log_r_final");

  for (int t = 1; t <= T; ++t) {
    const hmc::StepVars& s = chain.steps[static_cast<std::size_t>(t - 1)];
    const std::string tag = "[" + std::to_string(t) + "]";

    Var fwd = log_q_u_graph(tape, s.u, s.v_prev, kernel.alpha, kernel.log_mass,
                            options.entropy_shortcut);
    if (chain.with_acceptance) fwd = fwd + accept_log_term(s.p_acc, s.accepted);
    check_finite(fwd, "forward" + tag);

    Var rev;
    if (g.v0_cancelled && t == 1) {
      rev = zero_rows;
    } else {
      rev = models::gaussian_log_density(model.reverse_momentum(tape, s.z_prev, s.u, t, x),
                                         s.v_prev);
    }
    if (chain.with_acceptance) {
      // H(revHD(s_t)) - H(s_t): revHD of an accepted state is (z_{t-1}, u),
      // of a rejected one (z_prop, -v_prop), and H is even in v.
      Var dh = ad::select(s.accepted, s.h_start - s.h_prop, s.h_prop - s.h_start);
      if (s.diverged.maxCoeff() > 0.0) dh = ad::select(s.diverged, tape.constant(kInf), dh);
      Var p1 = ad::exp(-ad::clamp(dh, 0.0, kInf));
      if (cfg.accept_mode == AcceptMode::nn) {
        Var corr = model.reverse_accept_correction(tape, s.z, s.v, t, x);
        Var clipped = ad::clamp(p1 + corr, 0.0, 1.0);
        const Matrix sure = (dh.value().array() <= 0.0).cast<double>().matrix();
        p1 = ad::select(sure, tape.constant(1.0), clipped);
      }
      rev = rev + accept_log_term(p1, s.accepted);
    }
    check_finite(rev, "reverse" + tag);

    g.forward.push_back(fwd);
    g.reverse.push_back(rev);
  }

  Var sum = g.log_p_joint - g.log_q0 - g.log_fkin_v0 + g.log_r_final;
  for (int t = 0; t < T; ++t) {
    sum = sum + (g.reverse[static_cast<std::size_t>(t)] - g.forward[static_cast<std::size_t>(t)]);
  }
  g.l_aux = sum;
  check_finite(g.l_aux, "l_aux");
  return g;
}

BoundTerms summarize(const BoundGraph& g, const hmc::GraphTrace& chain) {
  BoundTerms t;
  t.rows = static_cast<int>(g.l_aux.rows());
  t.l_aux = g.l_aux.value().mean();
  t.log_p_joint = g.log_p_joint.value().mean();
  t.log_q0 = g.log_q0.value().mean();
  t.log_fkin_v0 = g.log_fkin_v0.value().mean();
  t.log_r_final = g.log_r_final.value().mean();
  for (const Var& v : g.forward) t.forward.push_back(v.value().mean());
  for (const Var& v : g.reverse) t.reverse.push_back(v.value().mean());
  for (const auto& s : chain.steps) t.acceptance_rate.push_back(s.accepted.mean());
  t.v0_cancelled = g.v0_cancelled;
  t.entropy_shortcut = g.entropy_shortcut;
  t.with_acceptance = g.with_acceptance;
  return t;
}

BatchNoise draw_batch_noise(std::uint64_t seed, std::uint64_t epoch,
                            const std::vector<std::uint64_t>& index, int d, int n_steps) {
  std::vector<Rng> streams;
  streams.reserve(index.size());
  BatchNoise n;
  n.eps.resize(static_cast<Eigen::Index>(index.size()), d);
  std::normal_distribution<double> normal;
  for (std::size_t i = 0; i < index.size(); ++i) {
    streams.push_back(make_stream(seed, epoch, index[i], StreamPurpose::chain));
    for (int j = 0; j < d; ++j) n.eps(static_cast<Eigen::Index>(i), j) = normal(streams.back());
  }
  n.chain = hmc::draw_noise(streams, d, n_steps);
  return n;
}

BatchBound bound_on_batch(Tape& tape, const models::Model& model, const potential::Potential& pot,
                          const Matrix& x, const BatchNoise& noise, const BoundOptions& options,
                          const hmc::RunOptions& run) {
  const models::ModelConfig& cfg = model.config();
  if (noise.chain.steps() != cfg.n_hmc) {
    throw std::invalid_argument("noise has " + std::to_string(noise.chain.steps()) +
                                " steps, model wants " + std::to_string(cfg.n_hmc));
  }
  BatchBound b;
  Var xv = tape.constant(x);
  b.q0 = model.encode(tape, xv);
  Var z0 = b.q0.mean + ad::exp(0.5 * b.q0.log_var) * tape.constant(noise.eps);
  b.kernel = model.kernel(tape, xv);
  b.chain = hmc::run_chain_graph(tape, pot, z0, b.kernel, cfg.hmc_config(), noise.chain, run);
  b.bound = assemble_bound(tape, model, b.chain, b.kernel, b.q0, xv, options);
  return b;
}

}  // namespace hmcvi::bound

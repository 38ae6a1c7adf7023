// Copyright (c) 2026 The hmcvi Authors
// SPDX-License-Identifier: Apache-2.0

#include "hmcvi/hmc/hmc.hpp"

#include "hmcvi/autodiff/ops.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

namespace hmcvi::hmc {

const char* mass_mode_name(MassMode m) {
  switch (m) {
    case MassMode::identity: return "identity";
    case MassMode::global: return "global";
    case MassMode::conditioned: return "conditioned";
  }
  return "?";
}

MassMode parse_mass_mode(const std::string& s) {
  for (MassMode m : {MassMode::identity, MassMode::global, MassMode::conditioned}) {
    if (s == mass_mode_name(m)) return m;
  }
  throw std::invalid_argument("unknown mass mode '" + s + "'");
}

MassSpec MassSpec::identity(int d) { return {MassMode::identity, Matrix::Ones(1, d)}; }

MassSpec MassSpec::global(const Vector& diag) {
  MassSpec m{MassMode::global, diag.transpose()};
  m.validate();
  return m;
}

MassSpec MassSpec::conditioned(const Matrix& per_row) {
  MassSpec m{MassMode::conditioned, per_row};
  m.validate();
  return m;
}

void MassSpec::validate() const {
  if (diag.size() == 0) throw std::invalid_argument("mass diagonal is empty");
  if (!diag.allFinite() || (diag.array() <= 0.0).any()) {
    throw std::invalid_argument("mass diagonal entries must be positive and finite");
  }
  if (mode != MassMode::conditioned && diag.rows() != 1) {
    throw std::invalid_argument("shared mass diagonal must be a single row");
  }
}

void HmcConfig::validate() const {
  if (n_hmc < 0) throw std::invalid_argument("number of HMC steps must be >= 0");
  leapfrog::LeapfrogConfig{step_size, n_leapfrog}.validate();
  if (!(alpha >= -1.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [-1, 1]");
}

KernelVars constant_kernel(Tape& tape, const HmcConfig& cfg, const MassSpec& mass) {
  cfg.validate();
  mass.validate();
  return {tape.constant(cfg.step_size), tape.constant(mass.log_diag()), tape.constant(cfg.alpha)};
}

ChainNoise draw_noise(std::vector<Rng>& streams, int d, int n_steps) {
  const auto rows = static_cast<Eigen::Index>(streams.size());
  ChainNoise n;
  n.v0.resize(rows, d);
  n.eta.assign(static_cast<std::size_t>(n_steps), Matrix(rows, d));
  n.uniform.assign(static_cast<std::size_t>(n_steps), Matrix(rows, 1));
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (Eigen::Index i = 0; i < rows; ++i) {
    Rng& r = streams[static_cast<std::size_t>(i)];
    for (int j = 0; j < d; ++j) n.v0(i, j) = normal(r);
    for (int t = 0; t < n_steps; ++t) {
      for (int j = 0; j < d; ++j) n.eta[static_cast<std::size_t>(t)](i, j) = normal(r);
      n.uniform[static_cast<std::size_t>(t)](i, 0) = unif(r);
    }
  }
  return n;
}

ChainNoise draw_noise(Rng& rng, int rows, int d, int n_steps) {
  std::vector<Rng> streams;
  streams.reserve(static_cast<std::size_t>(rows));
  for (int i = 0; i < rows; ++i) streams.emplace_back(rng());
  return draw_noise(streams, d, n_steps);
}

GraphTrace run_chain_graph(Tape& tape, const Potential& pot, const Var& z0, const KernelVars& kernel,
                           const HmcConfig& cfg, const ChainNoise& noise,
                           const RunOptions& options) {
  const Eigen::Index rows = z0.rows();
  if (noise.rows() != rows || noise.v0.cols() != z0.cols()) {
    throw std::invalid_argument("noise shape does not match the chain batch");
  }
  if (options.forced_accept != nullptr &&
      options.forced_accept->size() != static_cast<std::size_t>(noise.steps())) {
    throw std::invalid_argument("forced acceptance needs one entry per step");
  }
  const bool freeze = cfg.with_acceptance || options.freeze_without_acceptance;
  const leapfrog::Integrator integ{kernel.step_size, kernel.log_mass, cfg.n_leapfrog};
  Var sqrt_mass = ad::exp(0.5 * kernel.log_mass);
  Var keep_share = ad::sqrt(1.0 - ad::square(kernel.alpha));

  GraphTrace g;
  g.with_acceptance = cfg.with_acceptance;
  g.z0 = z0;
  g.v0 = options.initial_momentum.valid() ? options.initial_momentum
                                          : sqrt_mass * tape.constant(noise.v0);
  g.energy0 = pot.energy(tape, z0);
  Var z = g.z0, v = g.v0, energy = g.energy0;
  Var gradient = pot.gradient(tape, z0);

  for (int t = 0; t < noise.steps(); ++t) {
    const auto ti = static_cast<std::size_t>(t);
    StepVars s;
    s.z_prev = z;
    s.v_prev = v;
    s.v_samp = sqrt_mass * tape.constant(noise.eta[ti]);
    s.u = kernel.alpha * v + keep_share * s.v_samp;

    leapfrog::HdResult r = leapfrog::hd(tape, pot, {z, s.u}, integ, freeze, gradient);
    s.z_prop = r.state.z;
    s.v_prop = r.state.v;
    s.diverged = r.diverged.size() ? r.diverged : Matrix::Zero(rows, 1);
    Var energy_prop = pot.energy(tape, s.z_prop);
    s.h_start = energy + leapfrog::kinetic(s.u, kernel.log_mass);
    s.h_prop = energy_prop + leapfrog::kinetic(s.v_prop, kernel.log_mass);

    if (cfg.with_acceptance) {
      const Matrix dh = s.h_start.value() - s.h_prop.value();
      for (Eigen::Index i = 0; i < rows; ++i) {
        if (!std::isfinite(dh(i, 0))) s.diverged(i, 0) = 1.0;
      }
      Var log_ratio = ad::clamp(s.h_start - s.h_prop, -std::numeric_limits<double>::infinity(), 0.0);
      s.p_acc = ad::exp(log_ratio);
      const Matrix alive = (1.0 - s.diverged.array()).matrix();
      if (s.diverged.maxCoeff() > 0.0) {
        s.p_acc = ad::select(alive, s.p_acc, tape.constant(0.0));
      }
      if (options.forced_accept != nullptr) {
        s.accepted = (*options.forced_accept)[ti].cwiseProduct(alive);
      } else {
        s.accepted = (noise.uniform[ti].array() < s.p_acc.value().array()).cast<double>().matrix();
      }
      s.z = ad::select(s.accepted, s.z_prop, z);
      s.v = ad::select(s.accepted, s.v_prop, ad::neg(s.u));
      s.energy = ad::select(s.accepted, energy_prop, energy);
      s.gradient = ad::select(s.accepted, r.gradient, gradient);
    } else {
      s.p_acc = tape.constant(Matrix::Ones(rows, 1));
      s.accepted = Matrix::Ones(rows, 1);
      s.z = s.z_prop;
      s.v = s.v_prop;
      s.energy = energy_prop;
      s.gradient = r.gradient;
    }
    z = s.z;
    v = s.v;
    energy = s.energy;
    gradient = s.gradient;
    g.steps.push_back(std::move(s));
  }
  return g;
}

std::vector<double> ChainTrace::acceptance_rates() const {
  std::vector<double> out;
  for (const auto& s : steps) out.push_back(s.accepted.mean());
  return out;
}

ChainTrace to_record(const GraphTrace& g, const KernelVars& kernel, int n_leapfrog) {
  ChainTrace t;
  t.z0 = g.z0.value();
  t.v0 = g.v0.value();
  t.with_acceptance = g.with_acceptance;
  t.step_size = kernel.step_size.scalar();
  t.n_leapfrog = n_leapfrog;
  t.alpha = kernel.alpha.scalar();
  t.log_mass = kernel.log_mass.value();
  for (const auto& s : g.steps) {
    t.steps.push_back({s.z_prev.value(), s.v_prev.value(), s.v_samp.value(), s.u.value(),
                       s.z_prop.value(), s.v_prop.value(), s.h_start.value(), s.h_prop.value(),
                       s.p_acc.value(), s.accepted, s.diverged, s.z.value(), s.v.value()});
  }
  return t;
}

TraceCheck validate_trace(const ChainTrace& trace) {
  auto fail = [](int t, Eigen::Index i, const std::string& what) {
    std::ostringstream os;
    os << "step " << t << ", row " << i << ": " << what;
    return TraceCheck{false, os.str()};
  };
  const Matrix* z = &trace.z0;
  const Matrix* v = &trace.v0;
  for (std::size_t k = 0; k < trace.steps.size(); ++k) {
    const StepRecord& s = trace.steps[k];
    const int t = static_cast<int>(k) + 1;
    for (Eigen::Index i = 0; i < s.z.rows(); ++i) {
      if (s.z_prev.row(i) != z->row(i) || s.v_prev.row(i) != v->row(i)) {
        return fail(t, i, "previous state does not continue the chain");
      }
      const double a = s.accepted(i, 0);
      if (a != 0.0 && a != 1.0) return fail(t, i, "acceptance flag is not 0/1");
      if (!(s.p_acc(i, 0) >= 0.0 && s.p_acc(i, 0) <= 1.0)) {
        return fail(t, i, "acceptance probability outside [0, 1]");
      }
      if (!trace.with_acceptance && a != 1.0) return fail(t, i, "rejection without acceptance step");
      if (a == 1.0) {
        if (s.z.row(i) != s.z_prop.row(i) || s.v.row(i) != s.v_prop.row(i)) {
          return fail(t, i, "accepted state differs from the simulated state");
        }
      } else if (s.z.row(i) != s.z_prev.row(i) || s.v.row(i) != -s.u.row(i)) {
        return fail(t, i, "rejected state is not (z_prev, -u)");
      }
    }
    z = &s.z;
    v = &s.v;
  }
  return {};
}

// --- numeric conveniences -----------------------------------------------------

Vector sample_momentum(const Vector& mass_diag, Rng& rng) {
  std::normal_distribution<double> normal;
  Vector v(mass_diag.size());
  for (Eigen::Index j = 0; j < v.size(); ++j) v(j) = std::sqrt(mass_diag(j)) * normal(rng);
  return v;
}

Vector partial_update(const Vector& v_prev, const Vector& v_samp, double alpha) {
  if (!(alpha >= -1.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [-1, 1]");
  return alpha * v_prev + std::sqrt(std::max(0.0, 1.0 - alpha * alpha)) * v_samp;
}

Acceptance accept_prob(double h_star, double h_tilde) {
  const double dh = h_star - h_tilde;
  if (!std::isfinite(dh)) return {0.0, true};
  return {dh >= 0.0 ? 1.0 : std::exp(dh), false};
}

double hamiltonian(const Potential& pot, const PhaseState& s, const Vector& mass_diag) {
  return potential::energy(pot, s.z) + leapfrog::kinetic_energy(s.v, mass_diag);
}

Acceptance accept_prob(const Potential& pot, const PhaseState& s_star, const PhaseState& s_tilde,
                       const Vector& mass_diag) {
  double hs = 0.0, ht = 0.0;
  try {
    hs = hamiltonian(pot, s_star, mass_diag);
    ht = hamiltonian(pot, s_tilde, mass_diag);
  } catch (const potential::NonFiniteEnergy&) {
    return {0.0, true};
  }
  return accept_prob(hs, ht);
}

ChainTrace run_chain(const Potential& pot, const Matrix& z0, const HmcConfig& cfg,
                     const MassSpec& mass, const ChainNoise& noise, const RunOptions& options) {
  Tape tape(pot.params());
  KernelVars kernel = constant_kernel(tape, cfg, mass);
  GraphTrace g = run_chain_graph(tape, pot, tape.constant(z0), kernel, cfg, noise, options);
  return to_record(g, kernel, cfg.n_leapfrog);
}

ChainTrace run_chain(const Potential& pot, const Matrix& z0, const HmcConfig& cfg,
                     const MassSpec& mass, Rng& rng) {
  cfg.validate();
  const ChainNoise noise =
      draw_noise(rng, static_cast<int>(z0.rows()), static_cast<int>(z0.cols()), cfg.n_hmc);
  return run_chain(pot, z0, cfg, mass, noise);
}

std::pair<PhaseState, StepRecord> hmc_step(const Potential& pot, const PhaseState& s_prev,
                                           const HmcConfig& cfg, const Vector& mass_diag, Rng& rng) {
  cfg.validate();
  const int d = static_cast<int>(s_prev.z.size());
  ChainNoise noise = draw_noise(rng, 1, d, 1);
  const MassSpec mass = mass_diag.size() ? MassSpec::global(mass_diag) : MassSpec::identity(d);

  Tape tape(pot.params());
  KernelVars kernel = constant_kernel(tape, cfg, mass);
  RunOptions opts;
  opts.initial_momentum = tape.constant(Matrix(s_prev.v.transpose()));
  GraphTrace g = run_chain_graph(tape, pot, tape.constant(Matrix(s_prev.z.transpose())), kernel,
                                 cfg, noise, opts);
  ChainTrace t = to_record(g, kernel, cfg.n_leapfrog);
  StepRecord rec = t.steps.at(0);
  PhaseState next{rec.z.row(0).transpose(), rec.v.row(0).transpose()};
  return {next, rec};
}

BasicStep hmc_step_basic(const Potential& pot, const Vector& z, const Vector& eta, double uniform,
                         const HmcConfig& cfg, const Vector& mass_diag) {
  const Vector p_star = mass_diag.cwiseSqrt().cwiseProduct(eta);
  const PhaseState start{z, p_star};
  PhaseState end;
  try {
    end = leapfrog::leapfrog_hd(pot, start, {cfg.step_size, cfg.n_leapfrog}, mass_diag);
  } catch (const leapfrog::DivergenceError&) {
    return {z, p_star, false};
  }
  const PhaseState proposal{end.z, -end.v};
  const Acceptance a = accept_prob(pot, start, proposal, mass_diag);
  if (cfg.with_acceptance && !(uniform < a.p)) return {z, p_star, false};
  return {proposal.z, proposal.v, true};
}

std::vector<EnsembleSnapshot> simulate_ensemble(const Potential& pot, const Matrix& initial,
                                                const HmcConfig& cfg, const MassSpec& mass,
                                                Rng& rng) {
  cfg.validate();
  if (initial.rows() < 1) throw std::invalid_argument("ensemble needs at least one particle");
  const int d = static_cast<int>(initial.cols());
  const Vector mass_row = mass.diag.row(0).transpose();
  if (mass.mode == MassMode::conditioned) {
    throw std::invalid_argument("ensemble simulation uses a shared mass diagonal");
  }

  auto kinetic_rows = [&](const Matrix& v) {
    Vector k(v.rows());
    for (Eigen::Index i = 0; i < v.rows(); ++i) k(i) = leapfrog::kinetic_energy(v.row(i).transpose(), mass_row);
    return k;
  };

  std::vector<EnsembleSnapshot> out;
  EnsembleSnapshot snap;
  snap.step = 0;
  snap.z = initial;
  {
    ChainNoise n0 = draw_noise(rng, static_cast<int>(initial.rows()), d, 0);
    snap.v = (n0.v0.array().rowwise() * mass.diag.row(0).array().sqrt()).matrix();
  }
  snap.potential = potential::energy_rows(pot, snap.z).col(0);
  snap.kinetic = kinetic_rows(snap.v);
  for (int i = 0; i < initial.rows(); ++i) snap.particle.push_back(i);
  out.push_back(snap);

  RunOptions opts;
  opts.freeze_without_acceptance = true;
  for (int t = 1; t <= cfg.n_hmc; ++t) {
    const EnsembleSnapshot& prev = out.back();
    const int live = static_cast<int>(prev.z.rows());
    const ChainNoise noise = draw_noise(rng, live, d, 1);

    Tape tape(pot.params());
    KernelVars kernel = constant_kernel(tape, cfg, mass);
    opts.initial_momentum = tape.constant(prev.v);
    GraphTrace g = run_chain_graph(tape, pot, tape.constant(prev.z), kernel, cfg, noise, opts);
    const StepVars& s = g.steps.at(0);

    EnsembleSnapshot next;
    next.step = t;
    next.excluded = prev.excluded;
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < live; ++i) {
      if (s.diverged(i, 0) > 0.0) {
        ++next.excluded;
      } else {
        keep.push_back(i);
      }
    }
    const auto n = static_cast<Eigen::Index>(keep.size());
    next.z.resize(n, d);
    next.v.resize(n, d);
    next.z_prev.resize(n, d);
    next.u.resize(n, d);
    next.potential.resize(n);
    next.prev_potential.resize(n);
    double accepted = 0.0;
    for (Eigen::Index r = 0; r < n; ++r) {
      const Eigen::Index i = keep[static_cast<std::size_t>(r)];
      next.z.row(r) = s.z.value().row(i);
      next.v.row(r) = s.v.value().row(i);
      next.z_prev.row(r) = s.z_prev.value().row(i);
      next.u.row(r) = s.u.value().row(i);
      next.potential(r) = s.energy.value()(i, 0);
      next.prev_potential(r) = prev.potential(i);
      next.particle.push_back(prev.particle[static_cast<std::size_t>(i)]);
      accepted += s.accepted(i, 0);
    }
    next.kinetic = kinetic_rows(next.v);
    next.u_kinetic = kinetic_rows(next.u);
    next.acceptance_rate = n > 0 ? accepted / static_cast<double>(n) : 0.0;
    out.push_back(std::move(next));
  }
  return out;
}

void write_ensemble_csv(std::ostream& os, const std::vector<EnsembleSnapshot>& snapshots) {
  const Eigen::Index d = snapshots.empty() ? 0 : snapshots.front().z.cols();
  os << "step,particle";
  for (Eigen::Index j = 0; j < d; ++j) os << ",z" << j + 1;
  for (Eigen::Index j = 0; j < d; ++j) os << ",v" << j + 1;
  os << ",U,K,H,resample\n";
  const auto old = os.precision(17);
  auto row = [&](int step, int particle, const auto& z, const auto& v, double u, double k,
                 int resample) {
    os << step << ',' << particle;
    for (Eigen::Index j = 0; j < d; ++j) os << ',' << z(j);
    for (Eigen::Index j = 0; j < d; ++j) os << ',' << v(j);
    os << ',' << u << ',' << k << ',' << u + k << ',' << resample << '\n';
  };
  for (const auto& snap : snapshots) {
    for (Eigen::Index r = 0; r < snap.z.rows(); ++r) {
      const int p = snap.particle[static_cast<std::size_t>(r)];
      if (snap.step > 0) {
        row(snap.step, p, snap.z_prev.row(r), snap.u.row(r), snap.prev_potential(r),
            snap.u_kinetic(r), 1);
      }
      row(snap.step, p, snap.z.row(r), snap.v.row(r), snap.potential(r), snap.kinetic(r), 0);
    }
  }
  os.precision(old);
}

}  // namespace hmcvi::hmc

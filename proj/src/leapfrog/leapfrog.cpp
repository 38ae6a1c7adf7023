// Copyright (c) 2026 The hmcvi Authors
// SPDX-License-Identifier: Apache-2.0

#include "hmcvi/leapfrog/leapfrog.hpp"

#include "hmcvi/autodiff/ops.hpp"

#include <cmath>
#include <ostream>
#include <sstream>

namespace hmcvi::leapfrog {

void LeapfrogConfig::validate() const {
  if (!(step_size > 0.0) || !std::isfinite(step_size)) {
    throw std::invalid_argument("leapfrog step size must be positive and finite");
  }
  if (n_steps < 1) throw std::invalid_argument("leapfrog needs at least one step");
}

namespace {

// 1 for each row with a non-finite or out-of-bound coordinate in a or b.
Matrix out_of_bounds(const Matrix& a, const Matrix& b) {
  Matrix bad = Matrix::Zero(a.rows(), 1);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const bool ok = a.row(i).allFinite() && b.row(i).allFinite() &&
                    a.row(i).cwiseAbs().maxCoeff() <= kDivergenceBound &&
                    b.row(i).cwiseAbs().maxCoeff() <= kDivergenceBound;
    bad(i, 0) = ok ? 0.0 : 1.0;
  }
  return bad;
}

}  // namespace

HdResult hd(Tape& tape, const Potential& pot, const PhaseVars& s, const Integrator& integ,
            bool freeze_diverged, const Var& start_gradient) {
  if (integ.n_steps < 1) throw std::invalid_argument("leapfrog needs at least one step");
  if (s.z.rows() != s.v.rows() || s.z.cols() != s.v.cols()) {
    throw std::invalid_argument("position and momentum shapes differ");
  }
  const Eigen::Index rows = s.z.rows();
  Var half = 0.5 * integ.step_size;
  Var inv_mass = ad::exp(ad::neg(integ.log_mass));

  Var z = s.z;
  Var v = s.v;
  Var g = start_gradient.valid() ? start_gradient : pot.gradient(tape, z);
  Matrix diverged = Matrix::Zero(rows, 1);
  for (int n = 0; n < integ.n_steps; ++n) {
    Var v_half = v - half * g;
    Var z_next = z + integ.step_size * (inv_mass * v_half);
    Var g_next = pot.gradient(tape, z_next);
    Var v_next = v_half - half * g_next;

    const Matrix bad = out_of_bounds(z_next.value(), v_next.value());
    if (!freeze_diverged && bad.maxCoeff() > 0.0) {
      Eigen::Index row = 0;
      bad.col(0).maxCoeff(&row);
      std::ostringstream os;
      os << "leapfrog diverged at step " << n + 1 << " in row " << row;
      throw DivergenceError(os.str(), n + 1, row);
    }
    diverged = diverged.cwiseMax(bad);
    if (diverged.maxCoeff() > 0.0) {
      const Matrix keep = (1.0 - diverged.array()).matrix();
      z_next = ad::select(keep, z_next, z);
      v_next = ad::select(keep, v_next, v);
      g_next = ad::select(keep, g_next, g);
    }
    z = z_next;
    v = v_next;
    g = g_next;
  }
  return {{z, v}, diverged, g};
}

HdResult rev_hd(Tape& tape, const Potential& pot, const PhaseVars& s, const Integrator& integ,
                bool freeze_diverged) {
  HdResult r = hd(tape, pot, {s.z, ad::neg(s.v)}, integ, freeze_diverged);
  r.state.v = ad::neg(r.state.v);
  return r;
}

Var kinetic(const Var& v, const Var& log_mass) {
  return 0.5 * ad::sum_rows(ad::square(v) * ad::exp(ad::neg(log_mass)));
}

// --- numeric ------------------------------------------------------------------

namespace {

Matrix log_mass_row(const Vector& mass, Eigen::Index d) {
  if (mass.size() == 0) return Matrix::Zero(1, d);
  if (mass.size() != d) throw std::invalid_argument("mass diagonal has the wrong length");
  if ((mass.array() <= 0.0).any()) throw std::invalid_argument("mass entries must be positive");
  return mass.array().log().matrix().transpose();
}

Vector inverse_mass(const Vector& mass, Eigen::Index d) {
  if (mass.size() == 0) return Vector::Ones(d);
  if (mass.size() != d) throw std::invalid_argument("mass diagonal has the wrong length");
  return mass.cwiseInverse();
}

}  // namespace

std::pair<Matrix, Matrix> hd_rows(const Potential& pot, const Matrix& z, const Matrix& v,
                                  const LeapfrogConfig& cfg, const Vector& mass) {
  cfg.validate();
  Tape tape(pot.params());
  Integrator integ{tape.constant(cfg.step_size), tape.constant(log_mass_row(mass, z.cols())),
                   cfg.n_steps};
  HdResult r = hd(tape, pot, {tape.constant(z), tape.constant(v)}, integ, false);
  return {r.state.z.value(), r.state.v.value()};
}

PhaseState leapfrog_hd(const Potential& pot, const PhaseState& s, const LeapfrogConfig& cfg,
                       const Vector& mass) {
  auto [z, v] = hd_rows(pot, s.z.transpose(), s.v.transpose(), cfg, mass);
  return {z.row(0).transpose(), v.row(0).transpose()};
}

PhaseState leapfrog_rev_hd(const Potential& pot, const PhaseState& s, const LeapfrogConfig& cfg,
                           const Vector& mass) {
  PhaseState r = leapfrog_hd(pot, {s.z, -s.v}, cfg, mass);
  r.v = -r.v;
  return r;
}

PhaseState alt_leapfrog_step(const Potential& pot, const PhaseState& s, const LeapfrogConfig& cfg,
                             const Vector& mass) {
  cfg.validate();
  const double eps = cfg.step_size;
  const Vector minv = inverse_mass(mass, s.z.size());
  const Vector f0 = -potential::gradient_rows(pot, s.z.transpose()).row(0).transpose();
  PhaseState out;
  out.z = s.z + eps * minv.cwiseProduct(s.v) + (eps * eps / 2.0) * minv.cwiseProduct(f0);
  const Vector f1 = -potential::gradient_rows(pot, out.z.transpose()).row(0).transpose();
  out.v = s.v + eps * (f0 + f1) / 2.0;
  return out;
}

double kinetic_energy(const Vector& v, const Vector& mass) {
  const Vector minv = inverse_mass(mass, v.size());
  return 0.5 * v.cwiseProduct(v).dot(minv);
}

std::vector<TrajectoryPoint> trajectory(const Potential& pot, const PhaseState& s,
                                        const LeapfrogConfig& cfg, const Vector& mass) {
  cfg.validate();
  std::vector<TrajectoryPoint> out;
  PhaseState cur = s;
  LeapfrogConfig one = cfg;
  one.n_steps = 1;
  for (int n = 0; n <= cfg.n_steps; ++n) {
    if (n > 0) cur = leapfrog_hd(pot, cur, one, mass);
    TrajectoryPoint p;
    p.step = n;
    p.z = cur.z;
    p.v = cur.v;
    p.potential = potential::energy(pot, cur.z);
    p.kinetic = kinetic_energy(cur.v, mass);
    out.push_back(std::move(p));
  }
  return out;
}

void write_trajectory_csv(std::ostream& os, const std::vector<TrajectoryPoint>& points) {
  const Eigen::Index d = points.empty() ? 0 : points.front().z.size();
  os << "step";
  for (Eigen::Index j = 0; j < d; ++j) os << ",z" << j + 1;
  for (Eigen::Index j = 0; j < d; ++j) os << ",v" << j + 1;
  os << ",U,K,H\n";
  const auto old = os.precision(17);
  for (const auto& p : points) {
    os << p.step;
    for (Eigen::Index j = 0; j < d; ++j) os << ',' << p.z(j);
    for (Eigen::Index j = 0; j < d; ++j) os << ',' << p.v(j);
    os << ',' << p.potential << ',' << p.kinetic << ',' << p.hamiltonian() << '\n';
  }
  os.precision(old);
}

}  // namespace hmcvi::leapfrog

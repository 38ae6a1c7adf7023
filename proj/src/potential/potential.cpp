// Copyright (c) 2026 The hmcvi Authors
// SPDX-License-Identifier: Apache-2.0

#include "hmcvi/potential/potential.hpp"

#include "hmcvi/autodiff/ops.hpp"

#include <cmath>
#include <sstream>

namespace hmcvi::potential {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2 pi)

Matrix as_row(const Vector& v) { return v.transpose(); }

void check_dim(const Potential& pot, Eigen::Index cols) {
  if (cols != pot.dim()) {
    std::ostringstream os;
    os << pot.name() << ": position has " << cols << " coordinates, expected " << pot.dim();
    throw std::invalid_argument(os.str());
  }
}

void check_finite(const Potential& pot, const Matrix& values, const char* what) {
  if (!values.allFinite()) {
    throw NonFiniteEnergy(pot.name() + ": non-finite " + what);
  }
}

}  // namespace

double energy(const Potential& pot, const Vector& q) {
  return energy_rows(pot, as_row(q))(0, 0);
}

Vector grad_energy(const Potential& pot, const Vector& q) {
  check_dim(pot, q.size());
  Tape tape(pot.params());
  Var z = tape.variable(as_row(q));
  Var u = pot.energy(tape, z);
  check_finite(pot, u.value(), "energy");
  tape.backward(ad::sum_all(u));
  Matrix g = tape.grad(z);
  check_finite(pot, g, "gradient");
  return g.row(0).transpose();
}

Matrix energy_rows(const Potential& pot, const Matrix& z) {
  check_dim(pot, z.cols());
  Tape tape(pot.params());
  Matrix u = pot.energy(tape, tape.constant(z)).value();
  check_finite(pot, u, "energy");
  return u;
}

Matrix gradient_rows(const Potential& pot, const Matrix& z) {
  check_dim(pot, z.cols());
  Tape tape(pot.params());
  Matrix g = pot.gradient(tape, tape.constant(z)).value();
  check_finite(pot, g, "gradient");
  return g;
}

// ---------------------------------------------------------------------------

GaussianTarget::GaussianTarget(Vector mean, Vector stddev)
    : mean_(std::move(mean)), stddev_(std::move(stddev)) {
  if (mean_.size() == 0 || mean_.size() != stddev_.size()) {
    throw std::invalid_argument("GaussianTarget: mean/stddev size mismatch");
  }
  if ((stddev_.array() <= 0.0).any()) throw std::invalid_argument("GaussianTarget: stddev <= 0");
}

Var GaussianTarget::energy(Tape& tape, const Var& z) const {
  Var r = (z - tape.constant(as_row(mean_))) * tape.constant(as_row(stddev_.cwiseInverse()));
  return 0.5 * ad::sum_rows(ad::square(r));
}

Var GaussianTarget::gradient(Tape& tape, const Var& z) const {
  const Vector prec = stddev_.array().square().inverse();
  return (z - tape.constant(as_row(mean_))) * tape.constant(as_row(prec));
}

// ---------------------------------------------------------------------------

GaussianMixtureTarget::GaussianMixtureTarget(Matrix means, Matrix stddevs, Vector weights)
    : means_(std::move(means)), stddevs_(std::move(stddevs)), weights_(std::move(weights)) {
  if (means_.rows() == 0 || means_.rows() != stddevs_.rows() ||
      means_.cols() != stddevs_.cols() || weights_.size() != means_.rows()) {
    throw std::invalid_argument("GaussianMixtureTarget: inconsistent shapes");
  }
  if ((stddevs_.array() <= 0.0).any()) {
    throw std::invalid_argument("GaussianMixtureTarget: stddev <= 0");
  }
  if ((weights_.array() < 0.0).any() || std::abs(weights_.sum() - 1.0) > 1e-12) {
    throw std::invalid_argument("GaussianMixtureTarget: weights must lie on the simplex");
  }
}

std::vector<Var> GaussianMixtureTarget::log_terms(Tape& tape, const Var& z) const {
  const double d = static_cast<double>(dim());
  std::vector<Var> out;
  for (Eigen::Index k = 0; k < means_.rows(); ++k) {
    const Matrix mu = means_.row(k);
    const Matrix inv = stddevs_.row(k).cwiseInverse();
    const double c = std::log(weights_(k)) - stddevs_.row(k).array().log().sum() - 0.5 * d * kLog2Pi;
    Var r = (z - tape.constant(mu)) * tape.constant(inv);
    out.push_back(c - 0.5 * ad::sum_rows(ad::square(r)));
  }
  return out;
}

namespace {

// -log sum_k exp(a_k), shifted by the row maximum; the shift is a constant
// so it carries no gradient.
Var neg_logsumexp(Tape& tape, const std::vector<Var>& a) {
  Matrix shift = a[0].value();
  for (const Var& ak : a) shift = shift.cwiseMax(ak.value());
  Var m = tape.constant(shift);
  Var s = ad::exp(a[0] - m);
  for (std::size_t k = 1; k < a.size(); ++k) s = s + ad::exp(a[k] - m);
  return ad::neg(m + ad::log(s));
}

}  // namespace

Var GaussianMixtureTarget::energy(Tape& tape, const Var& z) const {
  return neg_logsumexp(tape, log_terms(tape, z));
}

Var GaussianMixtureTarget::gradient(Tape& tape, const Var& z) const {
  const std::vector<Var> a = log_terms(tape, z);
  Var u = neg_logsumexp(tape, a);
  Var g;
  for (Eigen::Index k = 0; k < means_.rows(); ++k) {
    // Responsibility r_k = w_k N_k / f; the component pulls towards its mean.
    Var resp = ad::exp(a[static_cast<std::size_t>(k)] + u);
    const Matrix prec = stddevs_.row(k).array().square().inverse().matrix();
    Var pull = (z - tape.constant(Matrix(means_.row(k)))) * tape.constant(prec);
    Var term = resp * pull;
    g = g.valid() ? g + term : term;
  }
  return g;
}

// ---------------------------------------------------------------------------

Var ZeroPotential::energy(Tape& tape, const Var& z) const {
  return tape.constant(Matrix::Zero(z.rows(), 1));
}

Var ZeroPotential::gradient(Tape& tape, const Var& z) const {
  return tape.constant(Matrix::Zero(z.rows(), z.cols()));
}

// ---------------------------------------------------------------------------

ConjugateGaussianPotential::ConjugateGaussianPotential(Matrix x) : x_(std::move(x)) {
  if (x_.size() == 0) throw std::invalid_argument("ConjugateGaussianPotential: empty x");
}

Var ConjugateGaussianPotential::energy(Tape& tape, const Var& z) const {
  const double d = static_cast<double>(dim());
  Var resid = tape.constant(x_) - z;
  return 0.5 * ad::sum_rows(ad::square(z)) + 0.5 * ad::sum_rows(ad::square(resid)) + d * kLog2Pi;
}

Var ConjugateGaussianPotential::gradient(Tape& tape, const Var& z) const {
  return 2.0 * z - tape.constant(x_);
}

// ---------------------------------------------------------------------------

VaeJointPotential::VaeJointPotential(models::MlpSpec decoder, const ad::ParamStore* params,
                                     Matrix x)
    : decoder_(std::move(decoder)), params_(params), x_(std::move(x)) {
  decoder_.validate();
  if (decoder_.activations.back() != models::Activation::sigmoid) {
    throw std::invalid_argument("VaeJointPotential: decoder output must be sigmoid");
  }
  if (x_.cols() != decoder_.output_dim) {
    throw std::invalid_argument("VaeJointPotential: datum width does not match decoder output");
  }
}

Var VaeJointPotential::energy(Tape& tape, const Var& z) const {
  const double d = static_cast<double>(dim());
  const models::MlpTrace trace = models::forward(tape, decoder_, z);
  const Matrix& raw = trace.output().value();
  const auto clamped =
      ((raw.array() < kRateFloor) || (raw.array() > 1.0 - kRateFloor)).count();
  if (clamped > 0) clamp_count_ += static_cast<std::uint64_t>(clamped);

  Var rate = ad::clamp(trace.output(), kRateFloor, 1.0 - kRateFloor);
  Var x = tape.constant(x_);
  Var loglik = ad::sum_rows(x * ad::log(rate) + (1.0 - x) * ad::log(1.0 - rate));
  Var log_prior = -0.5 * ad::sum_rows(ad::square(z)) - 0.5 * d * kLog2Pi;
  return ad::neg(log_prior + loglik);
}

Var VaeJointPotential::gradient(Tape& tape, const Var& z) const {
  const models::MlpTrace trace = models::forward(tape, decoder_, z);
  const Var& rate = trace.output();
  // d(-log p(x|z)) / d logits = rate - x where the rate is not clamped.
  const Matrix inside = ((rate.value().array() >= kRateFloor) &&
                         (rate.value().array() <= 1.0 - kRateFloor))
                            .cast<double>()
                            .matrix();
  Var dlogits = (rate - tape.constant(x_)) * tape.constant(inside);
  return z + models::input_gradient(tape, decoder_, trace, dlogits);
}

double vae_joint_logp(const VaeJointPotential& pot, const Vector& z) {
  return -energy(pot, z);
}

// ---------------------------------------------------------------------------

std::unique_ptr<Potential> make_potential(const std::string& name) {
  if (name == "gauss1d") return std::make_unique<GaussianTarget>(Vector::Zero(1), Vector::Ones(1));
  if (name == "gauss2d") return std::make_unique<GaussianTarget>(Vector::Zero(2), Vector::Ones(2));
  if (name == "free1d") return std::make_unique<ZeroPotential>(1);
  if (name == "free2d") return std::make_unique<ZeroPotential>(2);
  if (name == "mixture1d") {
    Matrix means(2, 1);
    means << -1.0, 1.0;
    return std::make_unique<GaussianMixtureTarget>(means, Matrix::Ones(2, 1),
                                                   Vector::Constant(2, 0.5));
  }
  if (name == "mixture3") {
    // Three basins of different depth and width on the plane.
    Matrix means(3, 2);
    means << -1.5, 0.0, 1.5, 0.6, 0.2, -1.6;
    Matrix stds(3, 2);
    stds << 0.6, 0.5, 0.5, 0.7, 0.8, 0.4;
    Vector w(3);
    w << 0.4, 0.35, 0.25;
    return std::make_unique<GaussianMixtureTarget>(means, stds, w);
  }
  if (name == "vae") {
    throw std::invalid_argument("potential 'vae' needs a trained decoder and a datum");
  }
  throw std::invalid_argument("unknown potential '" + name + "'");
}

std::vector<std::string> builtin_potential_names() {
  return {"gauss1d", "gauss2d", "mixture1d", "mixture3", "free1d", "free2d"};
}

}  // namespace hmcvi::potential

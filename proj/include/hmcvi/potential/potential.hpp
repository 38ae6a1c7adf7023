// Copyright (c) 2026 The hmcvi Authors
// SPDX-License-Identifier: Apache-2.0
//
// Potential energies U(q) = -log f(q) over batches of positions. Positions
// are B x d nodes (one row per chain); energies are B x 1.

#ifndef HMCVI_POTENTIAL_POTENTIAL_HPP_
#define HMCVI_POTENTIAL_POTENTIAL_HPP_

#include "hmcvi/autodiff/param_store.hpp"
#include "hmcvi/autodiff/tape.hpp"
#include "hmcvi/models/mlp.hpp"

#include <atomic>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace hmcvi::potential {

using ad::Matrix;
using ad::Tape;
using ad::Var;
using Vector = Eigen::VectorXd;

class NonFiniteEnergy : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Potential {
 public:
  virtual ~Potential() = default;

  virtual int dim() const = 0;
  virtual std::string name() const = 0;

  /// U per row.
  virtual Var energy(Tape& tape, const Var& z) const = 0;

  /// dU/dz per row, assembled from differentiable nodes so that quantities
  /// built on top of it (leapfrog states) can be differentiated again.
  virtual Var gradient(Tape& tape, const Var& z) const = 0;

  /// Store that parameter nodes of this potential bind to, if any.
  virtual const ad::ParamStore* params() const { return nullptr; }
};

/// Numeric U(q) for a single position. Throws NonFiniteEnergy.
double energy(const Potential& pot, const Vector& q);

/// Numeric dU/dq by reverse-mode differentiation of energy().
Vector grad_energy(const Potential& pot, const Vector& q);

/// Row-wise numeric energies and explicit-graph gradients of a B x d batch.
Matrix energy_rows(const Potential& pot, const Matrix& z);
Matrix gradient_rows(const Potential& pot, const Matrix& z);

/// Diagonal Gaussian with the normalising constant dropped:
/// U(q) = sum(((q - mean) / std)^2) / 2.
class GaussianTarget : public Potential {
 public:
  GaussianTarget(Vector mean, Vector stddev);
  int dim() const override { return static_cast<int>(mean_.size()); }
  std::string name() const override { return "gaussian"; }
  Var energy(Tape& tape, const Var& z) const override;
  Var gradient(Tape& tape, const Var& z) const override;
  const Vector& mean() const { return mean_; }
  const Vector& stddev() const { return stddev_; }

 private:
  Vector mean_;
  Vector stddev_;
};

/// Mixture of diagonal Gaussians, fully normalised.
class GaussianMixtureTarget : public Potential {
 public:
  /// means and stddevs are K x d; weights has K entries summing to 1.
  GaussianMixtureTarget(Matrix means, Matrix stddevs, Vector weights);
  int dim() const override { return static_cast<int>(means_.cols()); }
  std::string name() const override { return "mixture"; }
  Var energy(Tape& tape, const Var& z) const override;
  Var gradient(Tape& tape, const Var& z) const override;

 private:
  // log(w_k N(z; mu_k, sigma_k)) per row for each component.
  std::vector<Var> log_terms(Tape& tape, const Var& z) const;

  Matrix means_;
  Matrix stddevs_;
  Vector weights_;
};

/// U = 0: free motion.
class ZeroPotential : public Potential {
 public:
  explicit ZeroPotential(int dim) : dim_(dim) {}
  int dim() const override { return dim_; }
  std::string name() const override { return "free"; }
  Var energy(Tape& tape, const Var& z) const override;
  Var gradient(Tape& tape, const Var& z) const override;

 private:
  int dim_;
};

/// Joint energy of the model z ~ N(0, I), x | z ~ N(z, I), with every
/// constant kept: U(z) = -log p(x, z).
class ConjugateGaussianPotential : public Potential {
 public:
  /// x is B x d (or 1 x d, shared by all rows).
  explicit ConjugateGaussianPotential(Matrix x);
  int dim() const override { return static_cast<int>(x_.cols()); }
  std::string name() const override { return "conjugate"; }
  Var energy(Tape& tape, const Var& z) const override;
  Var gradient(Tape& tape, const Var& z) const override;

 private:
  Matrix x_;
};

/// U(z) = -log N(z; 0, I) - log p(x | z) under a Bernoulli decoder, every
/// constant kept. Rates are clamped to [kRateFloor, 1 - kRateFloor].
class VaeJointPotential : public Potential {
 public:
  static constexpr double kRateFloor = 1e-7;

  /// `decoder` maps z to pixel logits; its output activation must be sigmoid.
  /// x is B x D binary (or 1 x D, shared by all rows).
  VaeJointPotential(models::MlpSpec decoder, const ad::ParamStore* params, Matrix x);

  int dim() const override { return decoder_.input_dim; }
  std::string name() const override { return "vae"; }
  Var energy(Tape& tape, const Var& z) const override;
  Var gradient(Tape& tape, const Var& z) const override;
  const ad::ParamStore* params() const override { return params_; }

  /// Number of rate entries clamped so far, over every evaluation.
  std::uint64_t clamp_count() const { return clamp_count_.load(); }

 private:
  models::MlpSpec decoder_;
  const ad::ParamStore* params_;
  Matrix x_;
  mutable std::atomic<std::uint64_t> clamp_count_{0};
};

/// log p(x, z) = -U for the VAE joint at a single position.
double vae_joint_logp(const VaeJointPotential& pot, const Vector& z);

/// Built-in targets by name: gauss1d, gauss2d, mixture1d, mixture3, free1d, free2d.
std::unique_ptr<Potential> make_potential(const std::string& name);
std::vector<std::string> builtin_potential_names();

}  // namespace hmcvi::potential

#endif  // HMCVI_POTENTIAL_POTENTIAL_HPP_

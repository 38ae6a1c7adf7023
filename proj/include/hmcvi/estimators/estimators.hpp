// Copyright (c) 2026 The hmcvi Authors
// SPDX-License-Identifier: Apache-2.0
//
// Importance-sampling estimates of log p(x).
//
// For each datum the proposal is N(m, diag exp(log_var_q0)), where m is the
// mean of a few final chain positions drawn from the HMC-enhanced posterior
// and log_var_q0 the encoder's variance. With S proposal draws z_s,
//
//   log p(x) ~= logsumexp_s(w_s) - log S,   w_s = -U(z_s) - log p_samp(z_s)
//
// and the standard error follows from the delta method on exp(w).

#ifndef HMCVI_ESTIMATORS_ESTIMATORS_HPP_
#define HMCVI_ESTIMATORS_ESTIMATORS_HPP_

#include "hmcvi/models/model.hpp"
#include "hmcvi/rng.hpp"

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <vector>

namespace hmcvi::estimators {

using ad::Matrix;
using potential::Vector;
using ad::Var;

struct IsConfig {
  int n_samples = 5000;
  int posterior_probes = 5;
  void validate() const;
};

void to_json(models::Json& j, const IsConfig& c);
void from_json(const models::Json& j, IsConfig& c);

struct IsEstimate {
  double log_p = 0.0;
  double std_error = 0.0;  // of log_p
  int n_samples = 0;
  int n_invalid = 0;       // weights equal to -inf
  double max_log_weight = 0.0;
};

/// Thrown when no weight is finite. The message lists the weight counts.
class NoValidWeights : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reduction of a weight population in index order. -inf weights count as
/// zero weights; NaN or +inf are errors (std::domain_error).
IsEstimate estimate_from_log_weights(const Vector& log_w);

/// S draws from N(mean, diag exp(log_var)) weighted against the joint energy of
/// one datum. `pot` must be a single-datum potential.
IsEstimate estimate_with_proposal(const potential::Potential& pot, const Vector& mean,
                                  const Vector& log_var, int n_samples, Rng& rng);

/// Posterior mean probe: mean of `probes` final chain positions for x_row.
Vector posterior_mean_probe(const models::Model& model, const Matrix& x_row, int probes,
                            std::uint64_t seed, std::uint64_t index);

/// One estimate per row of x. Row i draws from make_stream(seed, *, index[i],
/// importance), so results do not depend on batching.
std::vector<IsEstimate> estimate_nll(const models::Model& model, const Matrix& x,
                                     const IsConfig& cfg, std::uint64_t seed,
                                     const std::vector<std::uint64_t>& index);

/// CSV: datum,log_p,nll,std_error,n_samples
void write_nll_csv(std::ostream& os, const std::vector<std::uint64_t>& index,
                   const std::vector<IsEstimate>& estimates);

}  // namespace hmcvi::estimators

#endif  // HMCVI_ESTIMATORS_ESTIMATORS_HPP_

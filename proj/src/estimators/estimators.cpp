// Copyright (c) 2026 The hmcvi Authors
// SPDX-License-Identifier: Apache-2.0

#include "hmcvi/estimators/estimators.hpp"

#include "hmcvi/autodiff/ops.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

namespace hmcvi::estimators {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
// Epoch key of the proposal stream; probe j uses epoch j.
constexpr std::uint64_t kProposalEpoch = std::uint64_t{1} << 32;

}  // namespace

void IsConfig::validate() const {
  if (n_samples < 1) throw std::invalid_argument("n_samples must be >= 1");
  if (posterior_probes < 1) throw std::invalid_argument("posterior_probes must be >= 1");
}

void to_json(models::Json& j, const IsConfig& c) {
  j = models::Json{{"n_samples", c.n_samples}, {"posterior_probes", c.posterior_probes}};
}

void from_json(const models::Json& j, IsConfig& c) {
  for (const auto& [key, value] : j.items()) {
    if (key == "n_samples") c.n_samples = value.get<int>();
    else if (key == "posterior_probes") c.posterior_probes = value.get<int>();
    else throw std::invalid_argument("unknown importance-sampling field '" + key + "'");
  }
  c.validate();
}

IsEstimate estimate_from_log_weights(const Vector& log_w) {
  const Eigen::Index S = log_w.size();
  if (S == 0) throw std::invalid_argument("estimate_from_log_weights: no weights");
  IsEstimate e;
  e.n_samples = static_cast<int>(S);
  double m = -std::numeric_limits<double>::infinity();
  for (Eigen::Index s = 0; s < S; ++s) {
    const double w = log_w(s);
    if (std::isnan(w) || w == std::numeric_limits<double>::infinity()) {
      throw std::domain_error("importance weight is NaN or +inf");
    }
    if (w == -std::numeric_limits<double>::infinity()) ++e.n_invalid;
    m = std::max(m, w);
  }
  if (e.n_invalid == S) {
    throw NoValidWeights("all " + std::to_string(S) + " importance weights are -inf");
  }
  e.max_log_weight = m;
  // Shifted weights lie in (0, 1]; sums run in index order.
  double sum = 0.0, sum_sq = 0.0;
  for (Eigen::Index s = 0; s < S; ++s) {
    const double r = std::exp(log_w(s) - m);
    sum += r;
    sum_sq += r * r;
  }
  const double n = static_cast<double>(S);
  const double mean = sum / n;
  e.log_p = m + std::log(mean);
  if (S > 1) {
    const double var = std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0));
    e.std_error = std::sqrt(var / n) / mean;
  }
  return e;
}

IsEstimate estimate_with_proposal(const potential::Potential& pot, const Vector& mean,
                                  const Vector& log_var, int n_samples, Rng& rng) {
  if (n_samples < 1) throw std::invalid_argument("n_samples must be >= 1");
  const Eigen::Index d = mean.size();
  if (log_var.size() != d) throw std::invalid_argument("proposal mean and variance differ in size");
  const Vector sd = (0.5 * log_var.array()).exp();
  std::normal_distribution<double> normal;
  Matrix z(n_samples, d);
  Vector log_q(n_samples);
  const double norm = -0.5 * (static_cast<double>(d) * kLog2Pi + log_var.sum());
  for (int s = 0; s < n_samples; ++s) {
    double quad = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      const double e = normal(rng);
      z(s, j) = mean(j) + sd(j) * e;
      quad += e * e;
    }
    log_q(s) = norm - 0.5 * quad;
  }
  const Matrix u = potential::energy_rows(pot, z);
  const Vector log_w = -u.col(0) - log_q;
  return estimate_from_log_weights(log_w);
}

Vector posterior_mean_probe(const models::Model& model, const Matrix& x_row, int probes,
                            std::uint64_t seed, std::uint64_t index) {
  if (x_row.rows() != 1) throw std::invalid_argument("posterior_mean_probe: one datum at a time");
  const models::ModelConfig& cfg = model.config();
  const int d = cfg.latent_dim;
  std::vector<Rng> streams;
  Matrix eps(probes, d);
  std::normal_distribution<double> normal;
  for (int j = 0; j < probes; ++j) {
    streams.push_back(
        make_stream(seed, static_cast<std::uint64_t>(j), index, StreamPurpose::importance));
    for (int k = 0; k < d; ++k) eps(j, k) = normal(streams.back());
  }
  const hmc::ChainNoise noise = hmc::draw_noise(streams, d, cfg.n_hmc);
  const Matrix x = x_row.replicate(probes, 1);
  auto pot = model.potential(x);
  ad::Tape tape(&model.params());
  Var xv = tape.constant(x);
  const models::GaussianHead q0 = model.encode(tape, xv);
  Var z0 = q0.mean + ad::exp(0.5 * q0.log_var) * tape.constant(eps);
  hmc::RunOptions run;
  run.freeze_without_acceptance = true;
  const hmc::GraphTrace g =
      hmc::run_chain_graph(tape, *pot, z0, model.kernel(tape, xv), cfg.hmc_config(), noise, run);
  return g.final_z().value().colwise().mean().transpose();
}

std::vector<IsEstimate> estimate_nll(const models::Model& model, const Matrix& x,
                                     const IsConfig& cfg, std::uint64_t seed,
                                     const std::vector<std::uint64_t>& index) {
  cfg.validate();
  if (static_cast<Eigen::Index>(index.size()) != x.rows()) {
    throw std::invalid_argument("estimate_nll: one index per datum required");
  }
  std::vector<IsEstimate> out;
  out.reserve(index.size());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Matrix x_row = x.row(i);
    const Vector mean = posterior_mean_probe(model, x_row, cfg.posterior_probes, seed,
                                             index[static_cast<std::size_t>(i)]);
    Vector log_var;
    {
      ad::Tape tape(&model.params());
      log_var = model.encode(tape, tape.constant(x_row)).log_var.value().row(0).transpose();
    }
    auto pot = model.potential(x_row);
    Rng rng = make_stream(seed, kProposalEpoch, index[static_cast<std::size_t>(i)],
                          StreamPurpose::importance);
    try {
      out.push_back(estimate_with_proposal(*pot, mean, log_var, cfg.n_samples, rng));
    } catch (const NoValidWeights& e) {
      std::ostringstream os;
      os << "datum " << index[static_cast<std::size_t>(i)] << ": " << e.what()
         << " (proposal mean " << mean.transpose() << ", log variance " << log_var.transpose()
         << ")";
      throw NoValidWeights(os.str());
    }
  }
  return out;
}

void write_nll_csv(std::ostream& os, const std::vector<std::uint64_t>& index,
                   const std::vector<IsEstimate>& estimates) {
  if (index.size() != estimates.size()) throw std::invalid_argument("write_nll_csv: size mismatch");
  os << "datum,log_p,nll,std_error,n_samples\n";
  const auto prec = os.precision(17);
  for (std::size_t i = 0; i < index.size(); ++i) {
    const IsEstimate& e = estimates[i];
    os << index[i] << ',' << e.log_p << ',' << -e.log_p << ',' << e.std_error << ','
       << e.n_samples << '\n';
  }
  os.precision(prec);
}

}  // namespace hmcvi::estimators

// Copyright (c) 2026 The hmcvi Authors
// SPDX-License-Identifier: Apache-2.0
//
// The learnable pieces of an HMCVI model and the densities built from them.
//
// Networks (parameter prefixes in brackets):
//   encoder  [enc]   x -> (mean, log variance) of q0(z | x)
//   decoder  [dec]   z -> Bernoulli rates (Bernoulli likelihood only)
//   r_V      [rv]    (z, u?, t, x) -> (mean, log variance) of v_{t-1}
//   r_final  [rfin]  (z_T, x) -> (mean, log variance) of v_T   (alpha != 0)
//   rev-acc  [racc]  (z_t, v_t, t, x) -> tanh correction      (nn acceptance)
//   mass     [mass]  x -> log diag M(x), clamped to [-30, 30]  (conditioned)
// Kernel parameters live under "kernel.".

#ifndef HMCVI_MODELS_MODEL_HPP_
#define HMCVI_MODELS_MODEL_HPP_

#include "hmcvi/autodiff/param_store.hpp"
#include "hmcvi/hmc/hmc.hpp"
#include "hmcvi/models/mlp.hpp"
#include "hmcvi/potential/potential.hpp"
#include "hmcvi/rng.hpp"

#include "json.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace hmcvi::models {

using Json = nlohmann::json;

/// Diagonal Gaussian given by its mean and log variance (both B x d).
struct GaussianHead {
  Var mean;
  Var log_var;
};

/// log N(x; mean, diag exp(log_var)) per row.
Var gaussian_log_density(const GaussianHead& h, const Var& x);
/// 1/2 sum_i (log 2 pi + log_var_i + 1) per row of log_var.
Var gaussian_entropy(const Var& log_var);
/// log f_kin(v) = log N(v; 0, diag exp(log_mass)) per row.
Var kinetic_log_density(const Var& v, const Var& log_mass);

enum class Likelihood { bernoulli, gaussian };
enum class AlphaMode { zero, fixed, learned };
enum class AcceptMode { off, simple, nn };

const char* likelihood_name(Likelihood l);
const char* alpha_mode_name(AlphaMode m);
const char* accept_mode_name(AcceptMode m);
Likelihood parse_likelihood(const std::string& s);
AlphaMode parse_alpha_mode(const std::string& s);
AcceptMode parse_accept_mode(const std::string& s);

struct ModelConfig {
  /// bernoulli: learned decoder over binary pixels; gaussian: fixed
  /// x | z ~ N(z, I) with prior N(0, I) (requires data_dim == latent_dim).
  Likelihood likelihood = Likelihood::bernoulli;
  int data_dim = 784;
  int latent_dim = 2;
  std::vector<int> hidden = {200, 200};
  int mass_hidden = 200;

  int n_hmc = 0;
  int n_leapfrog = 1;
  double step_size = 0.05;  // initial value when learned
  bool learn_step_size = true;
  AlphaMode alpha_mode = AlphaMode::zero;
  double alpha = 0.0;  // fixed value, or initial value when learned
  hmc::MassMode mass_mode = hmc::MassMode::identity;
  AcceptMode accept_mode = AcceptMode::off;
  double init_stddev = 0.01;

  void validate() const;
  bool with_acceptance() const { return accept_mode != AcceptMode::off; }
  /// With alpha fixed at 0, r_final is r_V evaluated at t = T + 1 and u is
  /// not a reverse-model input.
  bool merged_reverse() const { return alpha_mode == AlphaMode::zero; }
  hmc::HmcConfig hmc_config() const;
};

void to_json(Json& j, const ModelConfig& c);
void from_json(const Json& j, ModelConfig& c);

class Model {
 public:
  explicit Model(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  ad::ParamStore& params() { return params_; }
  const ad::ParamStore& params() const { return params_; }

  /// Draws every parameter from N(0, init_stddev^2); kernel parameters take
  /// their configured initial values.
  void init(Rng& rng);

  const MlpSpec& encoder_spec() const { return encoder_; }
  const std::optional<MlpSpec>& decoder_spec() const { return decoder_; }
  const MlpSpec& reverse_momentum_spec() const { return rv_; }
  const std::optional<MlpSpec>& final_momentum_spec() const { return rfinal_; }
  const std::optional<MlpSpec>& reverse_accept_spec() const { return racc_; }
  const std::optional<MlpSpec>& mass_spec() const { return mass_; }
  std::vector<MlpSpec> networks() const;

  /// Target energy U(z) = -log p(x, z) for the rows of x.
  std::unique_ptr<potential::Potential> potential(const Matrix& x) const;

  GaussianHead encode(Tape& tape, const Var& x) const;
  /// r_V(v_{t-1} | z_{t-1}, u_{t-1}, t, x); `u` is ignored when merged.
  GaussianHead reverse_momentum(Tape& tape, const Var& z, const Var& u, int t, const Var& x) const;
  /// r_final(v_T | z_T, x).
  GaussianHead final_momentum(Tape& tape, const Var& z, const Var& x) const;
  /// tanh output of the reverse-acceptance network, B x 1.
  Var reverse_accept_correction(Tape& tape, const Var& z, const Var& v, int t, const Var& x) const;

  /// Step size, log mass (1 x d, or B x d when conditioned) and alpha.
  hmc::KernelVars kernel(Tape& tape, const Var& x) const;
  /// Numeric values of the kernel for the rows of x.
  double step_size() const;
  double alpha() const;
  Matrix log_mass(const Matrix& x) const;

 private:
  ModelConfig cfg_;
  ad::ParamStore params_;
  MlpSpec encoder_;
  std::optional<MlpSpec> decoder_;
  MlpSpec rv_;
  std::optional<MlpSpec> rfinal_;
  std::optional<MlpSpec> racc_;
  std::optional<MlpSpec> mass_;
};

inline constexpr const char* kLogStepSize = "kernel.log_step_size";
inline constexpr const char* kAlphaRaw = "kernel.alpha_raw";
inline constexpr const char* kLogMass = "kernel.log_mass";

/// Copies encoder and decoder parameters from `source` into `target`. The
/// HMC-specific parameters of `target` are left as they are. Throws on a
/// missing parameter or a shape mismatch.
void warm_start(Model& target, const Model& source, bool freeze_copied = false);

// --- checkpoints -------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

/// JSON document holding the config, every parameter (value and Adam
/// moments) and the optimizer step counter. Doubles are written in their
/// shortest round-trip form, so save followed by load is bit-exact.
Json checkpoint_json(const Model& model, const Json& extra = Json::object());
Model model_from_json(const Json& j);

void save_checkpoint(const std::string& path, const Model& model,
                     const Json& extra = Json::object());
Model load_checkpoint(const std::string& path);

Json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const Json& j);

}  // namespace hmcvi::models

#endif  // HMCVI_MODELS_MODEL_HPP_

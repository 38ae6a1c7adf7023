// Copyright (c) 2026 The hmcvi Authors
// SPDX-License-Identifier: Apache-2.0

#include "hmcvi/models/model.hpp"

#include "hmcvi/autodiff/ops.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace hmcvi::models {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2 pi)
constexpr double kMassClamp = 30.0;

Var step_feature(Tape& tape, int t, Eigen::Index rows) {
  return tape.constant(Matrix::Constant(rows, 1, static_cast<double>(t)));
}

GaussianHead split_head(const MlpSpec& spec, const Var& out) {
  return {head(spec, out, 0), head(spec, out, 1)};
}

}  // namespace

Var gaussian_log_density(const GaussianHead& h, const Var& x) {
  Var diff = x - h.mean;
  Var quad = ad::square(diff) * ad::exp(-h.log_var);
  return -0.5 * ad::sum_rows(quad + h.log_var + kLog2Pi);
}

Var gaussian_entropy(const Var& log_var) {
  return 0.5 * ad::sum_rows(log_var + (kLog2Pi + 1.0));
}

Var kinetic_log_density(const Var& v, const Var& log_mass) {
  Var quad = ad::square(v) * ad::exp(-log_mass);
  return -0.5 * ad::sum_rows(quad + log_mass + kLog2Pi);
}

const char* likelihood_name(Likelihood l) {
  return l == Likelihood::bernoulli ? "bernoulli" : "gaussian";
}

const char* alpha_mode_name(AlphaMode m) {
  switch (m) {
    case AlphaMode::zero: return "zero";
    case AlphaMode::fixed: return "fixed";
    case AlphaMode::learned: return "learned";
  }
  return "?";
}

const char* accept_mode_name(AcceptMode m) {
  switch (m) {
    case AcceptMode::off: return "off";
    case AcceptMode::simple: return "simple";
    case AcceptMode::nn: return "nn";
  }
  return "?";
}

Likelihood parse_likelihood(const std::string& s) {
  if (s == "bernoulli") return Likelihood::bernoulli;
  if (s == "gaussian") return Likelihood::gaussian;
  throw std::invalid_argument("unknown likelihood '" + s + "'");
}

AlphaMode parse_alpha_mode(const std::string& s) {
  for (AlphaMode m : {AlphaMode::zero, AlphaMode::fixed, AlphaMode::learned}) {
    if (s == alpha_mode_name(m)) return m;
  }
  throw std::invalid_argument("unknown alpha mode '" + s + "'");
}

AcceptMode parse_accept_mode(const std::string& s) {
  for (AcceptMode m : {AcceptMode::off, AcceptMode::simple, AcceptMode::nn}) {
    if (s == accept_mode_name(m)) return m;
  }
  throw std::invalid_argument("unknown acceptance mode '" + s + "'");
}

void ModelConfig::validate() const {
  if (data_dim <= 0 || latent_dim <= 0) throw std::invalid_argument("dimensions must be positive");
  if (likelihood == Likelihood::gaussian && data_dim != latent_dim) {
    throw std::invalid_argument("gaussian likelihood needs data_dim == latent_dim");
  }
  for (int h : hidden) {
    if (h <= 0) throw std::invalid_argument("hidden widths must be positive");
  }
  if (mass_hidden <= 0) throw std::invalid_argument("mass_hidden must be positive");
  if (n_hmc < 0) throw std::invalid_argument("n_hmc must be >= 0");
  if (n_leapfrog < 1) throw std::invalid_argument("n_leapfrog must be >= 1");
  if (!(step_size > 0.0) || !std::isfinite(step_size)) {
    throw std::invalid_argument("step_size must be positive");
  }
  if (alpha_mode == AlphaMode::zero && alpha != 0.0) {
    throw std::invalid_argument("alpha mode 'zero' with nonzero alpha");
  }
  if (!(std::abs(alpha) < 1.0)) {
    throw std::invalid_argument("|alpha| = 1 gives a degenerate transition; need |alpha| < 1");
  }
  if (!(init_stddev > 0.0)) throw std::invalid_argument("init_stddev must be positive");
}

hmc::HmcConfig ModelConfig::hmc_config() const {
  hmc::HmcConfig h;
  h.n_hmc = n_hmc;
  h.n_leapfrog = n_leapfrog;
  h.step_size = step_size;
  h.alpha = alpha;
  h.with_acceptance = with_acceptance();
  return h;
}

void to_json(Json& j, const ModelConfig& c) {
  j = Json{{"likelihood", likelihood_name(c.likelihood)},
           {"data_dim", c.data_dim},
           {"latent_dim", c.latent_dim},
           {"hidden", c.hidden},
           {"mass_hidden", c.mass_hidden},
           {"n_hmc", c.n_hmc},
           {"n_leapfrog", c.n_leapfrog},
           {"step_size", c.step_size},
           {"learn_step_size", c.learn_step_size},
           {"alpha_mode", alpha_mode_name(c.alpha_mode)},
           {"alpha", c.alpha},
           {"mass_mode", hmc::mass_mode_name(c.mass_mode)},
           {"accept_mode", accept_mode_name(c.accept_mode)},
           {"init_stddev", c.init_stddev}};
}

void from_json(const Json& j, ModelConfig& c) {
  for (const auto& [key, value] : j.items()) {
    if (key == "likelihood") c.likelihood = parse_likelihood(value.get<std::string>());
    else if (key == "data_dim") c.data_dim = value.get<int>();
    else if (key == "latent_dim") c.latent_dim = value.get<int>();
    else if (key == "hidden") c.hidden = value.get<std::vector<int>>();
    else if (key == "mass_hidden") c.mass_hidden = value.get<int>();
    else if (key == "n_hmc") c.n_hmc = value.get<int>();
    else if (key == "n_leapfrog") c.n_leapfrog = value.get<int>();
    else if (key == "step_size") c.step_size = value.get<double>();
    else if (key == "learn_step_size") c.learn_step_size = value.get<bool>();
    else if (key == "alpha_mode") c.alpha_mode = parse_alpha_mode(value.get<std::string>());
    else if (key == "alpha") c.alpha = value.get<double>();
    else if (key == "mass_mode") c.mass_mode = hmc::parse_mass_mode(value.get<std::string>());
    else if (key == "accept_mode") c.accept_mode = parse_accept_mode(value.get<std::string>());
    else if (key == "init_stddev") c.init_stddev = value.get<double>();
    else throw std::invalid_argument("unknown model config field '" + key + "'");
  }
}

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const int d = cfg_.latent_dim;
  const int D = cfg_.data_dim;
  encoder_ = make_mlp("enc", D, cfg_.hidden, Activation::relu, 2 * d, Activation::linear, {d, d});
  if (cfg_.likelihood == Likelihood::bernoulli) {
    decoder_ = make_mlp("dec", d, cfg_.hidden, Activation::softplus, D, Activation::sigmoid);
  }
  const int rv_in = d + (cfg_.merged_reverse() ? 0 : d) + 1 + D;
  rv_ = make_mlp("rv", rv_in, cfg_.hidden, Activation::relu, 2 * d, Activation::linear, {d, d});
  if (!cfg_.merged_reverse()) {
    rfinal_ = make_mlp("rfin", d + D, cfg_.hidden, Activation::relu, 2 * d, Activation::linear,
                       {d, d});
  }
  if (cfg_.accept_mode == AcceptMode::nn) {
    racc_ = make_mlp("racc", 2 * d + 1 + D, cfg_.hidden, Activation::relu, 1, Activation::tanh);
  }
  if (cfg_.mass_mode == hmc::MassMode::conditioned) {
    mass_ = make_mlp("mass", D, {cfg_.mass_hidden}, Activation::relu, d, Activation::linear);
  }
}

std::vector<MlpSpec> Model::networks() const {
  std::vector<MlpSpec> out{encoder_};
  if (decoder_) out.push_back(*decoder_);
  out.push_back(rv_);
  for (const auto* s : {&rfinal_, &racc_, &mass_}) {
    if (*s) out.push_back(**s);
  }
  return out;
}

void Model::init(Rng& rng) {
  params_ = ad::ParamStore();
  for (const MlpSpec& s : networks()) init_params(s, params_, rng, cfg_.init_stddev);
  if (cfg_.learn_step_size) params_.add(kLogStepSize, Matrix::Constant(1, 1, std::log(cfg_.step_size)));
  if (cfg_.alpha_mode == AlphaMode::learned) {
    params_.add(kAlphaRaw, Matrix::Constant(1, 1, std::atanh(cfg_.alpha)));
  }
  if (cfg_.mass_mode == hmc::MassMode::global) {
    params_.add(kLogMass, Matrix::Zero(1, cfg_.latent_dim));
  }
}

std::unique_ptr<potential::Potential> Model::potential(const Matrix& x) const {
  if (x.cols() != cfg_.data_dim) throw std::invalid_argument("data has the wrong width");
  if (decoder_) return std::make_unique<potential::VaeJointPotential>(*decoder_, &params_, x);
  return std::make_unique<potential::ConjugateGaussianPotential>(x);
}

GaussianHead Model::encode(Tape& tape, const Var& x) const {
  return split_head(encoder_, forward(tape, encoder_, x).output());
}

GaussianHead Model::reverse_momentum(Tape& tape, const Var& z, const Var& u, int t,
                                     const Var& x) const {
  std::vector<Var> in{z};
  if (!cfg_.merged_reverse()) {
    if (!u.valid()) throw std::invalid_argument("r_V needs the updated momentum when alpha != 0");
    in.push_back(u);
  }
  in.push_back(step_feature(tape, t, z.rows()));
  in.push_back(x);
  return split_head(rv_, forward(tape, rv_, ad::concat_cols(in)).output());
}

GaussianHead Model::final_momentum(Tape& tape, const Var& z, const Var& x) const {
  if (cfg_.merged_reverse()) return reverse_momentum(tape, z, Var(), cfg_.n_hmc + 1, x);
  return split_head(*rfinal_, forward(tape, *rfinal_, ad::concat_cols({z, x})).output());
}

Var Model::reverse_accept_correction(Tape& tape, const Var& z, const Var& v, int t,
                                     const Var& x) const {
  if (!racc_) throw std::logic_error("model has no reverse-acceptance network");
  Var in = ad::concat_cols({z, v, step_feature(tape, t, z.rows()), x});
  return forward(tape, *racc_, in).output();
}

hmc::KernelVars Model::kernel(Tape& tape, const Var& x) const {
  hmc::KernelVars k;
  k.step_size = cfg_.learn_step_size ? ad::exp(tape.param(kLogStepSize))
                                     : tape.constant(cfg_.step_size);
  switch (cfg_.alpha_mode) {
    case AlphaMode::zero: k.alpha = tape.constant(0.0); break;
    case AlphaMode::fixed: k.alpha = tape.constant(cfg_.alpha); break;
    case AlphaMode::learned: k.alpha = ad::tanh(tape.param(kAlphaRaw)); break;
  }
  switch (cfg_.mass_mode) {
    case hmc::MassMode::identity:
      k.log_mass = tape.constant(Matrix::Zero(1, cfg_.latent_dim));
      break;
    case hmc::MassMode::global: k.log_mass = tape.param(kLogMass); break;
    case hmc::MassMode::conditioned:
      k.log_mass = ad::clamp(forward(tape, *mass_, x).output(), -kMassClamp, kMassClamp);
      break;
  }
  return k;
}

double Model::step_size() const {
  return cfg_.learn_step_size ? std::exp(params_.value(kLogStepSize)(0, 0)) : cfg_.step_size;
}

double Model::alpha() const {
  switch (cfg_.alpha_mode) {
    case AlphaMode::zero: return 0.0;
    case AlphaMode::fixed: return cfg_.alpha;
    case AlphaMode::learned: return std::tanh(params_.value(kAlphaRaw)(0, 0));
  }
  return 0.0;
}

Matrix Model::log_mass(const Matrix& x) const {
  Tape tape(&params_);
  return kernel(tape, tape.constant(x)).log_mass.value();
}

void warm_start(Model& target, const Model& source, bool freeze_copied) {
  for (const char* prefix : {"enc.", "dec."}) {
    const auto names = target.params().names_with_prefix(prefix);
    for (const std::string& name : names) {
      if (!source.params().contains(name)) {
        throw std::invalid_argument("warm start: source lacks parameter " + name);
      }
      const Matrix& v = source.params().value(name);
      const Matrix& t = target.params().value(name);
      if (v.rows() != t.rows() || v.cols() != t.cols()) {
        throw std::invalid_argument("warm start: shape mismatch for " + name);
      }
      target.params().set(name, v);
      if (freeze_copied) target.params().freeze(name);
    }
  }
}

Json matrix_to_json(const Matrix& m) {
  std::vector<double> data(static_cast<std::size_t>(m.size()));
  // Row-major so the file reads naturally.
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) data[k++] = m(i, j);
  }
  return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Matrix matrix_from_json(const Json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (rows < 0 || cols < 0 || data.size() != static_cast<std::size_t>(rows * cols)) {
    throw std::invalid_argument("matrix entry has inconsistent size");
  }
  Matrix m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = data[k++].get<double>();
  }
  return m;
}

Json checkpoint_json(const Model& model, const Json& extra) {
  Json params = Json::object();
  for (const std::string& name : model.params().names()) {
    const auto& e = model.params().entry(name);
    params[name] = Json{{"value", matrix_to_json(e.value)},
                        {"m", matrix_to_json(e.first_moment)},
                        {"v", matrix_to_json(e.second_moment)},
                        {"frozen", e.frozen}};
  }
  return Json{{"format", "hmcvi-checkpoint"},
              {"version", kCheckpointVersion},
              {"config", model.config()},
              {"adam_step", model.params().step()},
              {"params", params},
              {"extra", extra}};
}

Model model_from_json(const Json& j) {
  if (j.value("format", "") != "hmcvi-checkpoint") throw std::invalid_argument("not a checkpoint");
  const int version = j.at("version").get<int>();
  if (version != kCheckpointVersion) {
    throw std::invalid_argument("unsupported checkpoint version " + std::to_string(version));
  }
  Model model(j.at("config").get<ModelConfig>());
  Rng unused(0);
  model.init(unused);
  const Json& params = j.at("params");
  for (const std::string& name : model.params().names()) {
    if (!params.contains(name)) throw std::invalid_argument("checkpoint lacks parameter " + name);
  }
  for (const auto& [name, p] : params.items()) {
    if (!model.params().contains(name)) {
      throw std::invalid_argument("checkpoint has unexpected parameter " + name);
    }
    ad::ParamStore::Entry e;
    e.value = matrix_from_json(p.at("value"));
    e.first_moment = matrix_from_json(p.at("m"));
    e.second_moment = matrix_from_json(p.at("v"));
    e.frozen = p.value("frozen", false);
    const Matrix& expect = model.params().value(name);
    if (e.value.rows() != expect.rows() || e.value.cols() != expect.cols()) {
      throw std::invalid_argument("checkpoint shape mismatch for " + name);
    }
    model.params().restore(name, e);
  }
  model.params().set_step(j.at("adam_step").get<std::uint64_t>());
  return model;
}

void save_checkpoint(const std::string& path, const Model& model, const Json& extra) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out << checkpoint_json(model, extra).dump();
  if (!out) throw std::runtime_error("failed writing checkpoint " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path);
  return model_from_json(Json::parse(in));
}

}  // namespace hmcvi::models

// Copyright (c) 2026 The hmcvi Authors
// SPDX-License-Identifier: Apache-2.0

#include "hmcvi/models/mlp.hpp"

#include "hmcvi/autodiff/ops.hpp"

#include <numeric>
#include <stdexcept>

namespace hmcvi::models {

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::linear: return "linear";
    case Activation::relu: return "relu";
    case Activation::softplus: return "softplus";
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
    case Activation::exp: return "exp";
  }
  return "?";
}

Activation parse_activation(const std::string& name) {
  for (Activation a : {Activation::linear, Activation::relu, Activation::softplus,
                       Activation::sigmoid, Activation::tanh, Activation::exp}) {
    if (name == activation_name(a)) return a;
  }
  throw std::invalid_argument("unknown activation '" + name + "'");
}

int MlpSpec::width(int k) const {
  if (k == 0) return input_dim;
  if (k <= static_cast<int>(hidden.size())) return hidden[static_cast<std::size_t>(k - 1)];
  return output_dim;
}

void MlpSpec::validate() const {
  if (input_dim <= 0 || output_dim <= 0) throw std::invalid_argument(prefix + ": non-positive dims");
  for (int h : hidden) {
    if (h <= 0) throw std::invalid_argument(prefix + ": non-positive hidden width");
  }
  if (activations.size() != hidden.size() + 1) {
    throw std::invalid_argument(prefix + ": need one activation per layer");
  }
  if (!heads.empty() && std::accumulate(heads.begin(), heads.end(), 0) != output_dim) {
    throw std::invalid_argument(prefix + ": head widths do not sum to output width");
  }
}

MlpSpec make_mlp(std::string prefix, int input_dim, std::vector<int> hidden, Activation hidden_act,
                 int output_dim, Activation output, std::vector<int> heads) {
  MlpSpec s;
  s.prefix = std::move(prefix);
  s.input_dim = input_dim;
  s.activations.assign(hidden.size(), hidden_act);
  s.activations.push_back(output);
  s.hidden = std::move(hidden);
  s.output_dim = output_dim;
  s.heads = heads.empty() ? std::vector<int>{output_dim} : std::move(heads);
  s.validate();
  return s;
}

std::string weight_name(const MlpSpec& spec, int layer) {
  return spec.prefix + ".W" + std::to_string(layer);
}

std::string bias_name(const MlpSpec& spec, int layer) {
  return spec.prefix + ".b" + std::to_string(layer);
}

std::size_t parameter_count(const MlpSpec& spec) {
  spec.validate();
  std::size_t n = 0;
  for (int k = 0; k < spec.n_layers(); ++k) {
    const auto in = static_cast<std::size_t>(spec.width(k));
    const auto out = static_cast<std::size_t>(spec.width(k + 1));
    n += in * out + out;
  }
  return n;
}

void init_params(const MlpSpec& spec, ad::ParamStore& params, std::mt19937_64& rng,
                 double stddev) {
  spec.validate();
  std::normal_distribution<double> normal(0.0, stddev);
  auto draw = [&](Eigen::Index r, Eigen::Index c) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
  };
  for (int k = 0; k < spec.n_layers(); ++k) {
    params.add(weight_name(spec, k), draw(spec.width(k), spec.width(k + 1)));
    params.add(bias_name(spec, k), draw(1, spec.width(k + 1)));
  }
}

namespace {

Var activate(Activation a, const Var& x) {
  switch (a) {
    case Activation::linear: return x;
    case Activation::relu: return ad::relu(x);
    case Activation::softplus: return ad::softplus(x);
    case Activation::sigmoid: return ad::sigmoid(x);
    case Activation::tanh: return ad::tanh(x);
    case Activation::exp: return ad::exp(x);
  }
  throw std::logic_error("bad activation");
}

// d post / d pre, as a node (relu's derivative is data).
Var activation_slope(Tape& tape, Activation a, const Var& pre, const Var& post) {
  switch (a) {
    case Activation::linear: return tape.constant(1.0);
    case Activation::relu:
      return tape.constant(Matrix((pre.value().array() > 0.0).cast<double>()));
    case Activation::softplus: return ad::sigmoid(pre);
    case Activation::sigmoid: return post * (1.0 - post);
    case Activation::tanh: return 1.0 - ad::square(post);
    case Activation::exp: return post;
  }
  throw std::logic_error("bad activation");
}

}  // namespace

MlpTrace forward(Tape& tape, const MlpSpec& spec, const Var& x) {
  if (x.cols() != spec.input_dim) {
    throw std::invalid_argument(spec.prefix + ": input has " + std::to_string(x.cols()) +
                                " columns, expected " + std::to_string(spec.input_dim));
  }
  MlpTrace trace;
  Var h = x;
  for (int k = 0; k < spec.n_layers(); ++k) {
    Var pre = ad::matmul(h, tape.param(weight_name(spec, k))) + tape.param(bias_name(spec, k));
    h = activate(spec.activations[static_cast<std::size_t>(k)], pre);
    trace.pre.push_back(pre);
    trace.post.push_back(h);
  }
  return trace;
}

Var input_gradient(Tape& tape, const MlpSpec& spec, const MlpTrace& trace, const Var& upstream) {
  Var g = upstream;
  for (int k = spec.n_layers() - 1; k >= 0; --k) {
    const auto idx = static_cast<std::size_t>(k);
    if (k < spec.n_layers() - 1) {
      g = g * activation_slope(tape, spec.activations[idx], trace.pre[idx], trace.post[idx]);
    }
    g = ad::matmul_t(g, tape.param(weight_name(spec, k)));
  }
  return g;
}

Var head(const MlpSpec& spec, const Var& output, int head_index) {
  int start = 0;
  for (int i = 0; i < head_index; ++i) start += spec.heads.at(static_cast<std::size_t>(i));
  return ad::slice_cols(output, start, spec.heads.at(static_cast<std::size_t>(head_index)));
}

}  // namespace hmcvi::models

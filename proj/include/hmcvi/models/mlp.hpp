// Copyright (c) 2026 The hmcvi Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef HMCVI_MODELS_MLP_HPP_
#define HMCVI_MODELS_MLP_HPP_

#include "hmcvi/autodiff/param_store.hpp"
#include "hmcvi/autodiff/tape.hpp"

#include <random>
#include <string>
#include <vector>

namespace hmcvi::models {

using ad::Matrix;
using ad::Tape;
using ad::Var;

enum class Activation { linear, relu, softplus, sigmoid, tanh, exp };

const char* activation_name(Activation a);
Activation parse_activation(const std::string& name);

/// Fully connected network. Layer k maps width(k) -> width(k+1) with weight
/// "<prefix>.W<k>" (in x out) and bias "<prefix>.b<k>" (1 x out).
struct MlpSpec {
  std::string prefix;
  int input_dim = 0;
  std::vector<int> hidden;
  /// One activation per hidden layer, plus one for the output layer.
  std::vector<Activation> activations;
  int output_dim = 0;
  /// Output column blocks (e.g. mean, log-variance); must sum to output_dim.
  std::vector<int> heads;

  int n_layers() const { return static_cast<int>(hidden.size()) + 1; }
  int width(int k) const;
  void validate() const;
};

/// Hidden layers share one activation; the output layer gets `output`.
MlpSpec make_mlp(std::string prefix, int input_dim, std::vector<int> hidden, Activation hidden_act,
                 int output_dim, Activation output = Activation::linear,
                 std::vector<int> heads = {});

std::string weight_name(const MlpSpec& spec, int layer);
std::string bias_name(const MlpSpec& spec, int layer);

std::size_t parameter_count(const MlpSpec& spec);

/// Adds every weight and bias with entries drawn from N(0, stddev^2).
void init_params(const MlpSpec& spec, ad::ParamStore& params, std::mt19937_64& rng,
                 double stddev);

/// Pre- and post-activation nodes of every layer of one evaluation.
struct MlpTrace {
  std::vector<Var> pre;
  std::vector<Var> post;
  Var output() const { return post.back(); }
};

MlpTrace forward(Tape& tape, const MlpSpec& spec, const Var& x);

/// Gradient of sum(upstream * output-pre-activation) with respect to the
/// network input, built from first-order nodes so it can itself be
/// differentiated.
Var input_gradient(Tape& tape, const MlpSpec& spec, const MlpTrace& trace, const Var& upstream);

/// Column block `head` of the network output.
Var head(const MlpSpec& spec, const Var& output, int head_index);

}  // namespace hmcvi::models

#endif  // HMCVI_MODELS_MLP_HPP_

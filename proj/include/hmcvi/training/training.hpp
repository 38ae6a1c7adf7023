// Copyright (c) 2026 The hmcvi Authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration, the training loop and checkpoint evaluation.
//
// Randomness is keyed, never sequential: binarization by (data seed, epoch,
// row), chain noise by (train seed, epoch, row), shuffling by (train seed,
// epoch). A run is therefore a pure function of its config and worker
// count. Validation reuses one fixed set of draws for the whole run, so
// validation bounds of different epochs (and different runs) are comparable.

#ifndef HMCVI_TRAINING_TRAINING_HPP_
#define HMCVI_TRAINING_TRAINING_HPP_

#include "hmcvi/bound/bound.hpp"
#include "hmcvi/estimators/estimators.hpp"
#include "hmcvi/models/model.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace hmcvi::training {

using ad::Matrix;
using models::Json;

enum class DatasetKind { mnist, conjugate, two_cluster };
DatasetKind parse_dataset_kind(const std::string& s);
const char* dataset_kind_name(DatasetKind k);

enum class Binarization { stochastic, threshold, none };
Binarization parse_binarization(const std::string& s);
const char* binarization_name(Binarization b);

struct DatasetSpec {
  DatasetKind kind = DatasetKind::mnist;
  // mnist: IDX files; the first n_train images train, the next n_valid
  // validate. A test file pair is optional; without it "test" means valid.
  std::string images = "data/mnist5k-images-idx3-ubyte.gz";
  std::string labels;
  std::string test_images;
  int n_train = 4000;
  int n_valid = 1000;
  int n_test = 1000;  // synthetic kinds only
  Binarization binarization = Binarization::stochastic;
  // synthetic kinds
  int dim = 2;
  double flip_prob = 0.1;
  std::uint64_t seed = 1;  // generation and binarization

  void validate() const;
};

struct ExperimentConfig {
  models::ModelConfig model;
  DatasetSpec dataset;

  double learning_rate = 1e-3;
  int batch_size = 64;
  int epochs = 10;
  std::uint64_t init_seed = 1;
  std::uint64_t train_seed = 2;
  std::uint64_t eval_seed = 3;

  // Encoder and decoder are copied from this checkpoint; the rest is fresh.
  std::string warm_start;
  bool freeze_warm_started = false;
  // Whole model and optimizer state are taken from this checkpoint and
  // training continues at its epoch count.
  std::string resume;

  bool entropy_shortcut = false;
  double clip_norm = 0.0;  // 0 disables
  int validate_every = 0;  // batches; 0 means once per epoch
  int eval_draws = 5;
  int non_finite_streak = 20;
  int workers = 1;

  estimators::IsConfig importance;
  int eval_nll_data = 100;  // data per split scored by importance sampling; 0 = all

  std::string output_dir;  // empty: nothing written

  void validate() const;
};

void to_json(Json& j, const DatasetSpec& s);
void from_json(const Json& j, DatasetSpec& s);
void to_json(Json& j, const ExperimentConfig& c);
void from_json(const Json& j, ExperimentConfig& c);

/// Sets the field at a dotted path ("model.n_hmc=3") in a config document.
/// The value is parsed as JSON when possible, else taken as a string. The
/// path must name an existing field.
void apply_override(Json& config, const std::string& assignment);

ExperimentConfig load_config(const std::string& path,
                             const std::vector<std::string>& overrides = {});

// --- data -----------------------------------------------------------------------

/// Images (or real vectors) of each split. `stochastic` marks grey values
/// that are re-binarized per epoch.
struct PreparedData {
  Matrix train, valid, test;
  bool stochastic = false;
  /// Analytic log p(x) of each valid/test row, conjugate data only.
  potential::Vector valid_log_px, test_log_px;
};

PreparedData prepare_data(const DatasetSpec& spec);

/// Training inputs of one epoch: re-binarized for stochastic data, the raw
/// matrix otherwise.
Matrix epoch_inputs(const PreparedData& d, const DatasetSpec& spec, std::uint64_t epoch);

/// Fixed evaluation inputs of a split: `k` stochastic binarizations keyed by
/// eval_seed, or the split itself once.
std::vector<Matrix> eval_inputs(const Matrix& split, bool stochastic, int k, std::uint64_t seed);

// --- bound over a data set ----------------------------------------------------

struct BoundStats {
  double mean = 0.0;  // mean L_aux per datum
  double std_error = 0.0;
  std::vector<double> acceptance_rate;  // per HMC step
  potential::Vector per_datum;          // L_aux of each row (last draw set)
};

/// Mean L_aux over all rows of every matrix in `inputs`. Chain noise of row
/// i of draw j comes from make_stream(seed, kEvalEpoch + j, i, chain).
BoundStats dataset_bound(const models::Model& model, const std::vector<Matrix>& inputs,
                         std::uint64_t seed, int batch_size, bool entropy_shortcut = false);

inline constexpr std::uint64_t kEvalEpoch = std::uint64_t{1} << 40;

// --- gradients of one batch ---------------------------------------------------

struct BatchResult {
  double bound = 0.0;  // mean L_aux
  std::vector<double> acceptance_rate;
  ad::Gradients grads;  // of -mean L_aux
};

/// Loss gradient of one batch. Rows are split into `workers` contiguous
/// chunks evaluated on separate threads; chunk results are added in chunk
/// order. Throws bound::NonFiniteTerm or leapfrog::DivergenceError.
BatchResult batch_gradient(const models::Model& model, const Matrix& x,
                           const std::vector<std::uint64_t>& index, std::uint64_t seed,
                           std::uint64_t epoch, bool entropy_shortcut, int workers);

// --- training -------------------------------------------------------------------

struct EpochLog {
  int epoch = 0;  // 1-based, counting resumed epochs
  std::uint64_t step = 0;
  double train_bound = 0.0;
  double valid_bound = 0.0;
  std::vector<double> acceptance_rate;  // training mean per HMC step
  int skipped_batches = 0;
  double wall_seconds = 0.0;
};

/// Raised after `non_finite_streak` consecutive unusable batches.
class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  models::Model best;
  models::Model last;
  double best_valid_bound = 0.0;
  int best_epoch = 0;
  std::vector<EpochLog> log;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Runs cfg.epochs epochs. `source`, if given, replaces cfg.warm_start as the
/// model to copy encoder and decoder from.
TrainResult train(const ExperimentConfig& cfg, const models::Model* source = nullptr,
                  const EpochCallback& on_epoch = {});

/// Header "epoch,step,train_bound,valid_bound,acc_1..acc_T,skipped,wall_seconds".
void write_metrics_header(std::ostream& os, int n_hmc);
void write_metrics_row(std::ostream& os, const EpochLog& e, int n_hmc);

/// Extra checkpoint fields written by train().
Json checkpoint_extra(const ExperimentConfig& cfg, int epoch, double valid_bound);

// --- evaluation -----------------------------------------------------------------

struct EvalMetrics {
  std::string split;
  double bound = 0.0;  // over all eval draws and rows
  double bound_std_error = 0.0;
  std::vector<double> acceptance_rate;
  // Importance sampling on the first n_nll rows of the first eval draw,
  // next to the bound of the same rows.
  int n_nll = 0;
  double log_p = 0.0;  // mean IS estimate
  double log_p_std_error = 0.0;
  double bound_on_nll_rows = 0.0;
  double bound_on_nll_rows_std_error = 0.0;
  std::vector<estimators::IsEstimate> per_datum;
  // Conjugate data: mean analytic log p(x) over the split.
  std::optional<double> analytic_log_p;
};

EvalMetrics evaluate(const models::Model& model, const ExperimentConfig& cfg,
                     const std::string& split);

void to_json(Json& j, const EvalMetrics& m);

}  // namespace hmcvi::training

#endif  // HMCVI_TRAINING_TRAINING_HPP_

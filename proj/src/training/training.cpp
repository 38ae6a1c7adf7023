// Copyright (c) 2026 The hmcvi Authors
// SPDX-License-Identifier: Apache-2.0

#include "hmcvi/training/training.hpp"

#include "hmcvi/autodiff/ops.hpp"
#include "hmcvi/data/data.hpp"
#include "hmcvi/leapfrog/leapfrog.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

namespace hmcvi::training {

namespace {

std::vector<std::uint64_t> index_range(std::uint64_t first, std::uint64_t n) {
  std::vector<std::uint64_t> idx(n);
  std::iota(idx.begin(), idx.end(), first);
  return idx;
}

Matrix take_rows(const Matrix& x, const std::vector<std::uint64_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

void add_into(ad::Gradients& acc, const ad::Gradients& g) {
  for (const auto& [name, m] : g) {
    auto it = acc.find(name);
    if (it == acc.end()) acc.emplace(name, m);
    else it->second += m;
  }
}

// Runs f(c) for chunk c = 0..n-1 on up to n threads; rethrows the exception
// of the lowest failing chunk.
template <typename F>
void for_chunks(int n, const F& f) {
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  auto guarded = [&](int c) {
    try {
      f(c);
    } catch (...) {
      errors[static_cast<std::size_t>(c)] = std::current_exception();
    }
  };
  if (n == 1) {
    guarded(0);
  } else {
    std::vector<std::thread> threads;
    for (int c = 0; c < n; ++c) threads.emplace_back(guarded, c);
    for (auto& t : threads) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::pair<Eigen::Index, Eigen::Index> chunk_bounds(Eigen::Index rows, int chunks, int c) {
  const Eigen::Index base = rows / chunks, extra = rows % chunks;
  const Eigen::Index begin = c * base + std::min<Eigen::Index>(c, extra);
  return {begin, base + (c < extra ? 1 : 0)};
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  return Json::parse(in);
}

}  // namespace

// --- config ------------------------------------------------------------------------

DatasetKind parse_dataset_kind(const std::string& s) {
  if (s == "mnist") return DatasetKind::mnist;
  if (s == "conjugate") return DatasetKind::conjugate;
  if (s == "two_cluster") return DatasetKind::two_cluster;
  throw std::invalid_argument("unknown dataset kind '" + s + "'");
}

const char* dataset_kind_name(DatasetKind k) {
  switch (k) {
    case DatasetKind::mnist: return "mnist";
    case DatasetKind::conjugate: return "conjugate";
    case DatasetKind::two_cluster: return "two_cluster";
  }
  return "?";
}

Binarization parse_binarization(const std::string& s) {
  if (s == "stochastic") return Binarization::stochastic;
  if (s == "threshold") return Binarization::threshold;
  if (s == "none") return Binarization::none;
  throw std::invalid_argument("unknown binarization '" + s + "'");
}

const char* binarization_name(Binarization b) {
  switch (b) {
    case Binarization::stochastic: return "stochastic";
    case Binarization::threshold: return "threshold";
    case Binarization::none: return "none";
  }
  return "?";
}

void DatasetSpec::validate() const {
  if (n_train < 1) throw std::invalid_argument("dataset.n_train must be >= 1");
  if (n_valid < 1) throw std::invalid_argument("dataset.n_valid must be >= 1");
  if (kind != DatasetKind::mnist && n_test < 1) throw std::invalid_argument("dataset.n_test must be >= 1");
  if (kind != DatasetKind::mnist && dim < 1) throw std::invalid_argument("dataset.dim must be >= 1");
  if (!(flip_prob >= 0.0 && flip_prob <= 0.5)) {
    throw std::invalid_argument("dataset.flip_prob must lie in [0, 0.5]");
  }
  if (kind == DatasetKind::mnist && images.empty()) throw std::invalid_argument("dataset.images is empty");
}

void ExperimentConfig::validate() const {
  model.validate();
  dataset.validate();
  importance.validate();
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (clip_norm < 0.0) throw std::invalid_argument("clip_norm must be >= 0");
  if (validate_every < 0) throw std::invalid_argument("validate_every must be >= 0");
  if (eval_draws < 1) throw std::invalid_argument("eval_draws must be >= 1");
  if (non_finite_streak < 1) throw std::invalid_argument("non_finite_streak must be >= 1");
  if (workers < 1) throw std::invalid_argument("workers must be >= 1");
  if (eval_nll_data < 0) throw std::invalid_argument("eval_nll_data must be >= 0");
  if (!warm_start.empty() && !resume.empty()) {
    throw std::invalid_argument("warm_start and resume are exclusive");
  }
  const bool gaussian = model.likelihood == models::Likelihood::gaussian;
  if (gaussian != (dataset.kind == DatasetKind::conjugate)) {
    throw std::invalid_argument("the conjugate dataset goes with the gaussian likelihood");
  }
  const int data_dim = dataset.kind == DatasetKind::mnist ? 784 : dataset.dim;
  if (model.data_dim != data_dim) {
    throw std::invalid_argument("model.data_dim " + std::to_string(model.data_dim) +
                                " does not match the dataset width " + std::to_string(data_dim));
  }
}

void to_json(Json& j, const DatasetSpec& s) {
  j = Json{{"kind", dataset_kind_name(s.kind)},
           {"images", s.images},
           {"labels", s.labels},
           {"test_images", s.test_images},
           {"n_train", s.n_train},
           {"n_valid", s.n_valid},
           {"n_test", s.n_test},
           {"binarization", binarization_name(s.binarization)},
           {"dim", s.dim},
           {"flip_prob", s.flip_prob},
           {"seed", s.seed}};
}

void from_json(const Json& j, DatasetSpec& s) {
  for (const auto& [key, value] : j.items()) {
    if (key == "kind") s.kind = parse_dataset_kind(value.get<std::string>());
    else if (key == "images") s.images = value.get<std::string>();
    else if (key == "labels") s.labels = value.get<std::string>();
    else if (key == "test_images") s.test_images = value.get<std::string>();
    else if (key == "n_train") s.n_train = value.get<int>();
    else if (key == "n_valid") s.n_valid = value.get<int>();
    else if (key == "n_test") s.n_test = value.get<int>();
    else if (key == "binarization") s.binarization = parse_binarization(value.get<std::string>());
    else if (key == "dim") s.dim = value.get<int>();
    else if (key == "flip_prob") s.flip_prob = value.get<double>();
    else if (key == "seed") s.seed = value.get<std::uint64_t>();
    else throw std::invalid_argument("unknown dataset field '" + key + "'");
  }
}

void to_json(Json& j, const ExperimentConfig& c) {
  j = Json{{"model", c.model},
           {"dataset", c.dataset},
           {"learning_rate", c.learning_rate},
           {"batch_size", c.batch_size},
           {"epochs", c.epochs},
           {"init_seed", c.init_seed},
           {"train_seed", c.train_seed},
           {"eval_seed", c.eval_seed},
           {"warm_start", c.warm_start},
           {"freeze_warm_started", c.freeze_warm_started},
           {"resume", c.resume},
           {"entropy_shortcut", c.entropy_shortcut},
           {"clip_norm", c.clip_norm},
           {"validate_every", c.validate_every},
           {"eval_draws", c.eval_draws},
           {"non_finite_streak", c.non_finite_streak},
           {"workers", c.workers},
           {"importance", c.importance},
           {"eval_nll_data", c.eval_nll_data},
           {"output_dir", c.output_dir}};
}

void from_json(const Json& j, ExperimentConfig& c) {
  for (const auto& [key, value] : j.items()) {
    if (key == "model") value.get_to(c.model);
    else if (key == "dataset") value.get_to(c.dataset);
    else if (key == "learning_rate") c.learning_rate = value.get<double>();
    else if (key == "batch_size") c.batch_size = value.get<int>();
    else if (key == "epochs") c.epochs = value.get<int>();
    else if (key == "init_seed") c.init_seed = value.get<std::uint64_t>();
    else if (key == "train_seed") c.train_seed = value.get<std::uint64_t>();
    else if (key == "eval_seed") c.eval_seed = value.get<std::uint64_t>();
    else if (key == "warm_start") c.warm_start = value.get<std::string>();
    else if (key == "freeze_warm_started") c.freeze_warm_started = value.get<bool>();
    else if (key == "resume") c.resume = value.get<std::string>();
    else if (key == "entropy_shortcut") c.entropy_shortcut = value.get<bool>();
    else if (key == "clip_norm") c.clip_norm = value.get<double>();
    else if (key == "validate_every") c.validate_every = value.get<int>();
    else if (key == "eval_draws") c.eval_draws = value.get<int>();
    else if (key == "non_finite_streak") c.non_finite_streak = value.get<int>();
    else if (key == "workers") c.workers = value.get<int>();
    else if (key == "importance") value.get_to(c.importance);
    else if (key == "eval_nll_data") c.eval_nll_data = value.get<int>();
    else if (key == "output_dir") c.output_dir = value.get<std::string>();
    else throw std::invalid_argument("unknown experiment field '" + key + "'");
  }
}

void apply_override(Json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw std::invalid_argument("override '" + assignment + "' is not of the form key=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json* node = &config;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (!node->is_object() || !node->contains(key)) {
      throw std::invalid_argument("no config field '" + path + "'");
    }
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  *node = std::move(value);
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  ExperimentConfig c;
  if (!path.empty()) c = read_json_file(path).get<ExperimentConfig>();
  Json full = c;
  for (const std::string& o : overrides) apply_override(full, o);
  c = full.get<ExperimentConfig>();
  c.validate();
  return c;
}

// --- data --------------------------------------------------------------------------

PreparedData prepare_data(const DatasetSpec& spec) {
  spec.validate();
  PreparedData d;
  switch (spec.kind) {
    case DatasetKind::mnist: {
      const data::ImageDataset all = data::load_idx(spec.images, spec.labels);
      if (all.size() < spec.n_train + spec.n_valid) {
        throw std::invalid_argument(spec.images + " holds " + std::to_string(all.size()) +
                                    " images, fewer than n_train + n_valid");
      }
      d.train = all.images.topRows(spec.n_train);
      d.valid = all.images.middleRows(spec.n_train, spec.n_valid);
      d.test = spec.test_images.empty() ? d.valid : data::load_idx(spec.test_images).images;
      if (spec.binarization == Binarization::threshold) {
        d.train = data::binarize_threshold(d.train);
        d.valid = data::binarize_threshold(d.valid);
        d.test = data::binarize_threshold(d.test);
      }
      d.stochastic = spec.binarization == Binarization::stochastic;
      break;
    }
    case DatasetKind::conjugate: {
      Rng rng = make_stream(spec.seed, 0, 0, StreamPurpose::init);
      const data::ConjugateDataset c =
          data::synthetic_conjugate(spec.n_train + spec.n_valid + spec.n_test, spec.dim, rng);
      d.train = c.x.topRows(spec.n_train);
      d.valid = c.x.middleRows(spec.n_train, spec.n_valid);
      d.test = c.x.bottomRows(spec.n_test);
      d.valid_log_px = c.log_px.segment(spec.n_train, spec.n_valid);
      d.test_log_px = c.log_px.tail(spec.n_test);
      break;
    }
    case DatasetKind::two_cluster: {
      Rng rng = make_stream(spec.seed, 0, 0, StreamPurpose::init);
      const data::ClusterDataset c = data::two_cluster(spec.n_train + spec.n_valid + spec.n_test,
                                                       spec.dim, spec.flip_prob, rng);
      d.train = c.x.topRows(spec.n_train);
      d.valid = c.x.middleRows(spec.n_train, spec.n_valid);
      d.test = c.x.bottomRows(spec.n_test);
      break;
    }
  }
  return d;
}

Matrix epoch_inputs(const PreparedData& d, const DatasetSpec& spec, std::uint64_t epoch) {
  return d.stochastic ? data::binarize_epoch(d.train, spec.seed, epoch) : d.train;
}

std::vector<Matrix> eval_inputs(const Matrix& split, bool stochastic, int k, std::uint64_t seed) {
  if (!stochastic) return {split};
  std::vector<Matrix> out;
  for (auto& draw : data::make_eval_draws(split, k, seed)) out.push_back(std::move(draw.x));
  return out;
}

// --- bounds and gradients ------------------------------------------------------------

BoundStats dataset_bound(const models::Model& model, const std::vector<Matrix>& inputs,
                         std::uint64_t seed, int batch_size, bool entropy_shortcut) {
  if (inputs.empty()) throw std::invalid_argument("dataset_bound: no inputs");
  const int T = model.config().n_hmc;
  const int d = model.config().latent_dim;
  bound::BoundOptions options;
  options.entropy_shortcut = entropy_shortcut;
  BoundStats s;
  s.acceptance_rate.assign(static_cast<std::size_t>(T), 0.0);
  double sum = 0.0, sum_sq = 0.0;
  std::size_t count = 0;
  for (std::size_t j = 0; j < inputs.size(); ++j) {
    const Matrix& x = inputs[j];
    s.per_datum.resize(x.rows());
    for (Eigen::Index begin = 0; begin < x.rows(); begin += batch_size) {
      const Eigen::Index n = std::min<Eigen::Index>(batch_size, x.rows() - begin);
      const Matrix xb = x.middleRows(begin, n);
      const auto index = index_range(static_cast<std::uint64_t>(begin), static_cast<std::uint64_t>(n));
      const bound::BatchNoise noise = bound::draw_batch_noise(seed, kEvalEpoch + j, index, d, T);
      ad::Tape tape(&model.params());
      const auto pot = model.potential(xb);
      hmc::RunOptions run;
      run.freeze_without_acceptance = true;
      const bound::BatchBound bb = bound::bound_on_batch(tape, model, *pot, xb, noise, options, run);
      const Matrix& l = bb.bound.l_aux.value();
      for (Eigen::Index i = 0; i < n; ++i) {
        sum += l(i, 0);
        sum_sq += l(i, 0) * l(i, 0);
        s.per_datum(begin + i) = l(i, 0);
      }
      count += static_cast<std::size_t>(n);
      for (int t = 0; t < T; ++t) {
        s.acceptance_rate[static_cast<std::size_t>(t)] += bb.chain.steps[static_cast<std::size_t>(t)].accepted.sum();
      }
    }
  }
  const double N = static_cast<double>(count);
  s.mean = sum / N;
  if (count > 1) s.std_error = std::sqrt(std::max(0.0, (sum_sq - N * s.mean * s.mean) / (N - 1.0)) / N);
  for (double& a : s.acceptance_rate) a /= N;
  return s;
}

BatchResult batch_gradient(const models::Model& model, const Matrix& x,
                           const std::vector<std::uint64_t>& index, std::uint64_t seed,
                           std::uint64_t epoch, bool entropy_shortcut, int workers) {
  const Eigen::Index B = x.rows();
  if (static_cast<Eigen::Index>(index.size()) != B) {
    throw std::invalid_argument("batch_gradient: one index per row required");
  }
  const int chunks = static_cast<int>(std::min<Eigen::Index>(workers, B));
  const int T = model.config().n_hmc;
  const int d = model.config().latent_dim;
  bound::BoundOptions options;
  options.entropy_shortcut = entropy_shortcut;

  struct ChunkOut {
    double bound_sum = 0.0;
    std::vector<double> accepted;
    ad::Gradients grads;
  };
  std::vector<ChunkOut> outs(static_cast<std::size_t>(chunks));
  for_chunks(chunks, [&](int c) {
    const auto [begin, n] = chunk_bounds(B, chunks, c);
    const Matrix xc = x.middleRows(begin, n);
    const std::vector<std::uint64_t> idx(index.begin() + begin, index.begin() + begin + n);
    const bound::BatchNoise noise = bound::draw_batch_noise(seed, epoch, idx, d, T);
    ad::Tape tape(&model.params());
    const auto pot = model.potential(xc);
    const bound::BatchBound bb = bound::bound_on_batch(tape, model, *pot, xc, noise, options);
    const ad::Var loss = ad::sum_all(bb.bound.l_aux) * (-1.0 / static_cast<double>(B));
    tape.backward(loss);
    ChunkOut& out = outs[static_cast<std::size_t>(c)];
    out.bound_sum = bb.bound.l_aux.value().sum();
    for (const auto& s : bb.chain.steps) out.accepted.push_back(s.accepted.sum());
    out.grads = tape.param_grads();
  });

  BatchResult r;
  r.acceptance_rate.assign(static_cast<std::size_t>(T), 0.0);
  for (const ChunkOut& out : outs) {
    r.bound += out.bound_sum;
    for (int t = 0; t < T; ++t) r.acceptance_rate[static_cast<std::size_t>(t)] += out.accepted[static_cast<std::size_t>(t)];
    add_into(r.grads, out.grads);
  }
  r.bound /= static_cast<double>(B);
  for (double& a : r.acceptance_rate) a /= static_cast<double>(B);
  return r;
}

// --- training ------------------------------------------------------------------------

Json checkpoint_extra(const ExperimentConfig& cfg, int epoch, double valid_bound) {
  return Json{{"experiment", cfg}, {"epoch", epoch}, {"valid_bound", valid_bound}};
}

void write_metrics_header(std::ostream& os, int n_hmc) {
  os << "epoch,step,train_bound,valid_bound";
  for (int t = 1; t <= n_hmc; ++t) os << ",acc_" << t;
  os << ",skipped,wall_seconds\n";
}

void write_metrics_row(std::ostream& os, const EpochLog& e, int n_hmc) {
  const auto prec = os.precision(17);
  os << e.epoch << ',' << e.step << ',' << e.train_bound << ',' << e.valid_bound;
  for (int t = 0; t < n_hmc; ++t) os << ',' << e.acceptance_rate[static_cast<std::size_t>(t)];
  os << ',' << e.skipped_batches << ',';
  os.precision(6);
  os << e.wall_seconds << '\n';
  os.precision(prec);
}

TrainResult train(const ExperimentConfig& cfg, const models::Model* source,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();
  const PreparedData data = prepare_data(cfg.dataset);
  const std::vector<Matrix> valid = eval_inputs(data.valid, data.stochastic, cfg.eval_draws, cfg.eval_seed);

  int epoch0 = 0;
  models::Model model(cfg.model);
  if (!cfg.resume.empty()) {
    const Json doc = read_json_file(cfg.resume);
    model = models::model_from_json(doc);
    if (Json(model.config()) != Json(cfg.model)) {
      throw std::invalid_argument("resumed checkpoint has a different model config");
    }
    epoch0 = doc.at("extra").value("epoch", 0);
  } else {
    Rng rng = make_stream(cfg.init_seed, 0, 0, StreamPurpose::init);
    model.init(rng);
    if (source != nullptr) {
      models::warm_start(model, *source, cfg.freeze_warm_started);
    } else if (!cfg.warm_start.empty()) {
      models::warm_start(model, models::load_checkpoint(cfg.warm_start), cfg.freeze_warm_started);
    }
  }

  std::ofstream metrics;
  std::filesystem::path out_dir;
  if (!cfg.output_dir.empty()) {
    out_dir = cfg.output_dir;
    std::filesystem::create_directories(out_dir);
    std::ofstream(out_dir / "config.json") << Json(cfg).dump(2) << '\n';
    metrics.open(out_dir / "metrics.csv");
    if (!metrics) throw std::runtime_error("cannot write " + (out_dir / "metrics.csv").string());
    write_metrics_header(metrics, cfg.model.n_hmc);
  }

  auto validate_now = [&]() {
    return dataset_bound(model, valid, cfg.eval_seed, std::max(cfg.batch_size, 256), cfg.entropy_shortcut).mean;
  };
  const double initial = validate_now();
  TrainResult result{model, model, initial, epoch0, {}};
  auto consider = [&](double v, int epoch) {
    if (v > result.best_valid_bound) {
      result.best_valid_bound = v;
      result.best_epoch = epoch;
      result.best = model;
      if (!out_dir.empty()) {
        models::save_checkpoint((out_dir / "best.json").string(), model, checkpoint_extra(cfg, epoch, v));
      }
    }
  };
  if (!out_dir.empty()) {
    models::save_checkpoint((out_dir / "best.json").string(), model, checkpoint_extra(cfg, epoch0, initial));
  }

  ad::AdamOptions adam;
  adam.clip_norm = cfg.clip_norm;
  const Eigen::Index N = data.train.rows();
  const int T = cfg.model.n_hmc;
  int streak = 0;
  int batches_since_validation = 0;
  for (int e = epoch0 + 1; e <= epoch0 + cfg.epochs; ++e) {
    const std::uint64_t epoch = static_cast<std::uint64_t>(e);
    const Matrix x = epoch_inputs(data, cfg.dataset, epoch);
    std::vector<std::uint64_t> order = index_range(0, static_cast<std::uint64_t>(N));
    Rng shuffle_rng = make_stream(cfg.train_seed, epoch, 0, StreamPurpose::shuffle);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochLog log;
    log.epoch = e;
    log.acceptance_rate.assign(static_cast<std::size_t>(T), 0.0);
    double valid_bound = std::numeric_limits<double>::quiet_NaN();
    int used = 0;
    for (Eigen::Index begin = 0; begin < N; begin += cfg.batch_size) {
      const Eigen::Index n = std::min<Eigen::Index>(cfg.batch_size, N - begin);
      const std::vector<std::uint64_t> idx(order.begin() + begin, order.begin() + begin + n);
      bool ok = false;
      try {
        const BatchResult r = batch_gradient(model, take_rows(x, idx), idx, cfg.train_seed, epoch,
                                             cfg.entropy_shortcut, cfg.workers);
        const ad::AdamReport rep = ad::adam_step(model.params(), r.grads, cfg.learning_rate, adam);
        if (rep.applied && std::isfinite(r.bound)) {
          ok = true;
          log.train_bound += r.bound;
          for (int t = 0; t < T; ++t) log.acceptance_rate[static_cast<std::size_t>(t)] += r.acceptance_rate[static_cast<std::size_t>(t)];
          ++used;
        }
      } catch (const bound::NonFiniteTerm&) {
      } catch (const leapfrog::DivergenceError&) {
      }
      if (ok) {
        streak = 0;
      } else {
        ++log.skipped_batches;
        if (++streak >= cfg.non_finite_streak) {
          throw TrainingAborted("aborted in epoch " + std::to_string(e) + " after " +
                                std::to_string(streak) + " consecutive non-finite batches");
        }
      }
      if (cfg.validate_every > 0 && ++batches_since_validation >= cfg.validate_every) {
        batches_since_validation = 0;
        valid_bound = validate_now();
        consider(valid_bound, e);
      }
    }
    if (used > 0) {
      log.train_bound /= used;
      for (double& a : log.acceptance_rate) a /= used;
    } else {
      log.train_bound = std::numeric_limits<double>::quiet_NaN();
    }
    if (cfg.validate_every == 0) {
      valid_bound = validate_now();
      consider(valid_bound, e);
    }
    log.valid_bound = valid_bound;
    log.step = model.params().step();
    log.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    result.log.push_back(log);
    if (metrics.is_open()) {
      write_metrics_row(metrics, log, T);
      metrics.flush();
    }
    if (on_epoch) on_epoch(log);
  }
  result.last = model;
  if (!out_dir.empty()) {
    const double last_valid = result.log.empty() ? initial : result.log.back().valid_bound;
    models::save_checkpoint((out_dir / "last.json").string(), model,
                            checkpoint_extra(cfg, epoch0 + cfg.epochs, last_valid));
  }
  return result;
}

// --- evaluation ----------------------------------------------------------------------

EvalMetrics evaluate(const models::Model& model, const ExperimentConfig& cfg,
                     const std::string& split) {
  const PreparedData data = prepare_data(cfg.dataset);
  const Matrix* x = nullptr;
  const potential::Vector* log_px = nullptr;
  if (split == "train") {
    x = &data.train;
  } else if (split == "valid") {
    x = &data.valid;
    log_px = &data.valid_log_px;
  } else if (split == "test") {
    x = &data.test;
    log_px = &data.test_log_px;
  } else {
    throw std::invalid_argument("unknown split '" + split + "'");
  }
  EvalMetrics m;
  m.split = split;
  const std::vector<Matrix> inputs = eval_inputs(*x, data.stochastic, cfg.eval_draws, cfg.eval_seed);
  const int bs = std::max(cfg.batch_size, 256);
  const BoundStats all = dataset_bound(model, inputs, cfg.eval_seed, bs, cfg.entropy_shortcut);
  m.bound = all.mean;
  m.bound_std_error = all.std_error;
  m.acceptance_rate = all.acceptance_rate;
  if (log_px != nullptr && log_px->size() > 0) m.analytic_log_p = log_px->mean();

  const Eigen::Index n_nll = cfg.eval_nll_data == 0
                                 ? x->rows()
                                 : std::min<Eigen::Index>(cfg.eval_nll_data, x->rows());
  m.n_nll = static_cast<int>(n_nll);
  if (n_nll > 0) {
    const Matrix xs = inputs.front().topRows(n_nll);
    m.per_datum = estimators::estimate_nll(model, xs, cfg.importance, cfg.eval_seed,
                                           index_range(0, static_cast<std::uint64_t>(n_nll)));
    double sum = 0.0, var = 0.0;
    for (const auto& e : m.per_datum) {
      sum += e.log_p;
      var += e.std_error * e.std_error;
    }
    m.log_p = sum / static_cast<double>(n_nll);
    m.log_p_std_error = std::sqrt(var) / static_cast<double>(n_nll);
    const BoundStats b = dataset_bound(model, {xs}, cfg.eval_seed, bs, cfg.entropy_shortcut);
    m.bound_on_nll_rows = b.mean;
    m.bound_on_nll_rows_std_error = b.std_error;
  }
  return m;
}

void to_json(Json& j, const EvalMetrics& m) {
  j = Json{{"split", m.split},
           {"bound", m.bound},
           {"bound_std_error", m.bound_std_error},
           {"acceptance_rate", m.acceptance_rate},
           {"n_nll", m.n_nll},
           {"log_p", m.log_p},
           {"nll", -m.log_p},
           {"log_p_std_error", m.log_p_std_error},
           {"bound_on_nll_rows", m.bound_on_nll_rows},
           {"bound_on_nll_rows_std_error", m.bound_on_nll_rows_std_error}};
  if (m.analytic_log_p) j["analytic_log_p"] = *m.analytic_log_p;
}

}  // namespace hmcvi::training

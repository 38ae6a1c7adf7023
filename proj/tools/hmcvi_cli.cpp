// Copyright (c) 2026 The hmcvi Authors
// SPDX-License-Identifier: Apache-2.0
//
// hmcvi: sample | train | evaluate | selftest

#include "criteria.hpp"
#include "hmcvi/bound/bound.hpp"
#include "hmcvi/data/data.hpp"
#include "hmcvi/estimators/estimators.hpp"
#include "hmcvi/hmc/hmc.hpp"
#include "hmcvi/leapfrog/leapfrog.hpp"
#include "hmcvi/potential/potential.hpp"
#include "hmcvi/training/training.hpp"

#include "CLI11.hpp"

#include <fstream>
#include <iostream>
#include <memory>

namespace {

using namespace hmcvi;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

Vector to_vector(const std::vector<double>& xs) {
  return Eigen::Map<const Vector>(xs.data(), static_cast<Eigen::Index>(xs.size()));
}

// Writes to `path`, or stdout for "" and "-".
template <typename F>
void with_output(const std::string& path, const F& f) {
  if (path.empty() || path == "-") {
    f(std::cout);
    return;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  f(out);
}

void write_json(const std::string& path, const models::Json& j) {
  with_output(path, [&](std::ostream& os) { os << j.dump(2) << '\n'; });
}

// --- sample ------------------------------------------------------------------------

struct TrajectoryArgs {
  std::string potential = "gauss2d";
  std::vector<double> z, v, mass;
  double step_size = 0.1;
  int steps = 20;
  std::string out;
};

void run_trajectory(const TrajectoryArgs& a) {
  auto pot = potential::make_potential(a.potential);
  const int d = pot->dim();
  const Vector z = a.z.empty() ? Vector::Zero(d) : to_vector(a.z);
  const Vector v = a.v.empty() ? Vector::Ones(d) : to_vector(a.v);
  if (z.size() != d || v.size() != d) throw std::invalid_argument("--z and --v need " + std::to_string(d) + " values");
  const auto points = leapfrog::trajectory(*pot, {z, v}, {a.step_size, a.steps}, to_vector(a.mass));
  with_output(a.out, [&](std::ostream& os) { leapfrog::write_trajectory_csv(os, points); });
}

struct EnsembleArgs {
  std::string potential = "mixture3";
  int particles = 1000;
  int n_hmc = 10;
  int n_leapfrog = 5;
  double step_size = 0.2;
  double alpha = 0.0;
  bool no_accept = false;
  std::vector<double> mass;
  double init_mean = 0.0;
  double init_std = 1.0;
  std::uint64_t seed = 1;
  std::string out;
};

void run_ensemble(const EnsembleArgs& a) {
  auto pot = potential::make_potential(a.potential);
  const int d = pot->dim();
  Rng rng = make_stream(a.seed, 0, 0, StreamPurpose::init);
  std::normal_distribution<double> normal(a.init_mean, a.init_std);
  Matrix initial(a.particles, d);
  for (Eigen::Index i = 0; i < initial.size(); ++i) initial.data()[i] = normal(rng);
  hmc::HmcConfig cfg;
  cfg.n_hmc = a.n_hmc;
  cfg.n_leapfrog = a.n_leapfrog;
  cfg.step_size = a.step_size;
  cfg.alpha = a.alpha;
  cfg.with_acceptance = !a.no_accept;
  const hmc::MassSpec mass = a.mass.empty() ? hmc::MassSpec::identity(d) : hmc::MassSpec::global(to_vector(a.mass));
  Rng chain = make_stream(a.seed, 0, 0, StreamPurpose::chain);
  const auto snaps = hmc::simulate_ensemble(*pot, initial, cfg, mass, chain);
  with_output(a.out, [&](std::ostream& os) { hmc::write_ensemble_csv(os, snaps); });
}

struct DataArgs {
  std::string kind = "conjugate";
  int n = 1000;
  int dim = 2;
  double flip_prob = 0.1;
  std::uint64_t seed = 1;
  std::string out;
};

void run_data(const DataArgs& a) {
  Rng rng = make_stream(a.seed, 0, 0, StreamPurpose::init);
  if (a.kind == "conjugate") {
    const auto ds = data::synthetic_conjugate(a.n, a.dim, rng);
    with_output(a.out, [&](std::ostream& os) { data::write_csv(os, ds); });
  } else if (a.kind == "two_cluster") {
    const auto ds = data::two_cluster(a.n, a.dim, a.flip_prob, rng);
    with_output(a.out, [&](std::ostream& os) { data::write_csv(os, ds); });
  } else {
    throw std::invalid_argument("unknown synthetic data kind '" + a.kind + "'");
  }
}

// --- train / evaluate --------------------------------------------------------------

void run_train(const std::string& config, const std::vector<std::string>& sets, bool print_only) {
  const training::ExperimentConfig cfg = training::load_config(config, sets);
  if (print_only) {
    std::cout << models::Json(cfg).dump(2) << '\n';
    return;
  }
  std::cerr << "training " << cfg.epochs << " epochs"
            << (cfg.output_dir.empty() ? "" : ", writing to " + cfg.output_dir) << '\n';
  training::write_metrics_header(std::cout, cfg.model.n_hmc);
  const training::TrainResult r = training::train(cfg, nullptr, [&](const training::EpochLog& e) {
    training::write_metrics_row(std::cout, e, cfg.model.n_hmc);
    std::cout.flush();
  });
  std::cerr << "best validation bound " << r.best_valid_bound << " at epoch " << r.best_epoch << '\n';
}

struct EvaluateArgs {
  std::string checkpoint;
  std::string config;
  std::vector<std::string> sets;
  std::string split = "valid";
  std::string out;
  std::string nll_out;
  std::string terms_out;
};

void run_evaluate(const EvaluateArgs& a) {
  std::ifstream in(a.checkpoint);
  if (!in) throw std::runtime_error("cannot read checkpoint " + a.checkpoint);
  const models::Json doc = models::Json::parse(in);
  const models::Model model = models::model_from_json(doc);
  training::ExperimentConfig cfg;
  if (!a.config.empty()) {
    cfg = training::load_config(a.config, a.sets);
  } else {
    // The experiment stored with the checkpoint, with overrides applied.
    models::Json j = doc.at("extra").value("experiment", models::Json(training::ExperimentConfig{}));
    for (const auto& s : a.sets) training::apply_override(j, s);
    cfg = j.get<training::ExperimentConfig>();
  }
  cfg.model = model.config();
  cfg.validate();

  const training::EvalMetrics m = training::evaluate(model, cfg, a.split);
  write_json(a.out, m);
  if (!a.nll_out.empty()) {
    std::vector<std::uint64_t> idx(m.per_datum.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    with_output(a.nll_out, [&](std::ostream& os) { estimators::write_nll_csv(os, idx, m.per_datum); });
  }
  if (!a.terms_out.empty()) {
    // Itemized bound terms on the first batch of the first evaluation draw.
    const training::PreparedData d = training::prepare_data(cfg.dataset);
    const Matrix& split = a.split == "train" ? d.train : a.split == "test" ? d.test : d.valid;
    const Matrix x = training::eval_inputs(split, d.stochastic, 1, cfg.eval_seed)
                         .front()
                         .topRows(std::min<Eigen::Index>(cfg.batch_size, split.rows()));
    std::vector<std::uint64_t> idx(static_cast<std::size_t>(x.rows()));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const bound::BatchNoise noise = bound::draw_batch_noise(cfg.eval_seed, training::kEvalEpoch, idx,
                                                            model.config().latent_dim, model.config().n_hmc);
    ad::Tape tape(&model.params());
    const auto pot = model.potential(x);
    hmc::RunOptions run;
    run.freeze_without_acceptance = true;
    bound::BoundOptions options;
    options.entropy_shortcut = cfg.entropy_shortcut;
    const bound::BatchBound bb = bound::bound_on_batch(tape, model, *pot, x, noise, options, run);
    write_json(a.terms_out, bound::summarize(bb.bound, bb.chain));
  }
}

// --- selftest ----------------------------------------------------------------------

int run_selftest(std::vector<int> only, bool all, const std::string& data_dir, const std::string& work_dir) {
  if (only.empty()) {
    // The invariant checks; the training criteria (8, 9, 11) take minutes to hours.
    only = all ? std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12}
               : std::vector<int>{1, 2, 3, 4, 5, 6, 7, 10, 12};
  }
  acceptance::Options o;
  o.data_dir = data_dir;
  o.work_dir = work_dir;
  o.progress = [](const std::string& s) { std::cerr << "  .. " << s << '\n'; };
  bool ok = true;
  for (const auto& r : acceptance::run(only, o)) {
    std::cout << acceptance::format(r) << '\n';
    ok = ok && r.pass;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hamiltonian Monte Carlo variational inference"};
  app.require_subcommand(1);

  auto* sample = app.add_subcommand("sample", "trajectory, ensemble and synthetic-data dumps");
  sample->require_subcommand(1);
  TrajectoryArgs ta;
  auto* traj = sample->add_subcommand("trajectory", "one leapfrog trajectory as CSV");
  traj->add_option("--potential", ta.potential, "built-in potential")->capture_default_str();
  traj->add_option("--z", ta.z, "start position");
  traj->add_option("--v", ta.v, "start momentum");
  traj->add_option("--mass", ta.mass, "diagonal mass (default identity)");
  traj->add_option("--step-size", ta.step_size)->capture_default_str();
  traj->add_option("--steps", ta.steps)->capture_default_str();
  traj->add_option("-o,--out", ta.out, "output CSV (default stdout)");
  EnsembleArgs ea;
  auto* ens = sample->add_subcommand("ensemble", "particle ensemble under T HMC steps as CSV");
  ens->add_option("--potential", ea.potential)->capture_default_str();
  ens->add_option("--particles", ea.particles)->capture_default_str();
  ens->add_option("--n-hmc", ea.n_hmc)->capture_default_str();
  ens->add_option("--n-leapfrog", ea.n_leapfrog)->capture_default_str();
  ens->add_option("--step-size", ea.step_size)->capture_default_str();
  ens->add_option("--alpha", ea.alpha)->capture_default_str();
  ens->add_flag("--no-accept", ea.no_accept, "skip the acceptance step");
  ens->add_option("--mass", ea.mass, "diagonal mass (default identity)");
  ens->add_option("--init-mean", ea.init_mean)->capture_default_str();
  ens->add_option("--init-std", ea.init_std)->capture_default_str();
  ens->add_option("--seed", ea.seed)->capture_default_str();
  ens->add_option("-o,--out", ea.out, "output CSV (default stdout)");
  DataArgs da;
  auto* dat = sample->add_subcommand("data", "synthetic data set as CSV");
  dat->add_option("--kind", da.kind, "conjugate | two_cluster")->capture_default_str();
  dat->add_option("--n", da.n)->capture_default_str();
  dat->add_option("--dim", da.dim)->capture_default_str();
  dat->add_option("--flip-prob", da.flip_prob)->capture_default_str();
  dat->add_option("--seed", da.seed)->capture_default_str();
  dat->add_option("-o,--out", da.out, "output CSV (default stdout)");

  std::string train_config;
  std::vector<std::string> train_sets;
  bool print_config = false;
  auto* train = app.add_subcommand("train", "train a model; metrics CSV rows go to stdout");
  train->add_option("-c,--config", train_config, "experiment JSON (fields not given keep defaults)");
  train->add_option("--set", train_sets, "override, e.g. --set model.n_hmc=3");
  train->add_flag("--print-config", print_config, "print the resolved config and exit");

  EvaluateArgs va;
  auto* evaluate = app.add_subcommand("evaluate", "bound, NLL and acceptance rates of a checkpoint");
  evaluate->add_option("checkpoint", va.checkpoint)->required();
  evaluate->add_option("-c,--config", va.config, "experiment JSON (default: the one stored with the checkpoint)");
  evaluate->add_option("--set", va.sets, "override, e.g. --set importance.n_samples=1000");
  evaluate->add_option("--split", va.split, "train | valid | test")->capture_default_str();
  evaluate->add_option("-o,--out", va.out, "metrics JSON (default stdout)");
  evaluate->add_option("--nll-out", va.nll_out, "per-datum NLL CSV");
  evaluate->add_option("--terms-out", va.terms_out, "itemized bound terms JSON");

  std::vector<int> only;
  bool all = false;
  std::string data_dir = "data";
  std::string work_dir = "selftest_work";
  auto* selftest = app.add_subcommand("selftest", "run the invariant checks");
  selftest->add_option("--only", only, "criteria to run")->check(CLI::Range(1, 12));
  selftest->add_flag("--all", all, "include the training criteria");
  selftest->add_option("--data-dir", data_dir)->capture_default_str();
  selftest->add_option("--work-dir", work_dir)->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*traj) run_trajectory(ta);
    else if (*ens) run_ensemble(ea);
    else if (*dat) run_data(da);
    else if (*train) run_train(train_config, train_sets, print_config);
    else if (*evaluate) run_evaluate(va);
    else if (*selftest) return run_selftest(only, all, data_dir, work_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

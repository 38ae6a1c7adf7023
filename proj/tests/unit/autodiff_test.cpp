// Copyright (c) 2026 The hmcvi Authors
// SPDX-License-Identifier: Apache-2.0

#include "hmcvi/autodiff/ops.hpp"
#include "hmcvi/autodiff/param_store.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

namespace ad = hmcvi::ad;
using ad::Matrix;
using ad::Tape;
using ad::Var;
using hmcvi::testing::central_difference;
using hmcvi::testing::max_relative_error;
using hmcvi::testing::random_matrix;

namespace {

Matrix scalar(double x) { return Matrix::Constant(1, 1, x); }

// Value and input-gradient of a graph builder at x.
struct Eval {
  double value;
  Matrix grad;
};

Eval evaluate(const std::function<Var(Tape&, Var)>& build, const Matrix& x) {
  Tape tape;
  Var in = tape.variable(x);
  Var out = build(tape, in);
  tape.backward(out);
  return {out.scalar(), tape.grad(in)};
}

double value_only(const std::function<Var(Tape&, Var)>& build, const Matrix& x) {
  Tape tape;
  return build(tape, tape.constant(x)).scalar();
}

}  // namespace

TEST(ForwardEval, SquareAtThree) {
  Tape tape;
  Var x = tape.variable(scalar(3.0));
  EXPECT_DOUBLE_EQ(ad::square(x).scalar(), 9.0);
}

TEST(ForwardEval, SoftplusAtZeroIsLogTwo) {
  Tape tape;
  Var x = tape.variable(scalar(0.0));
  EXPECT_NEAR(ad::softplus(x).scalar(), std::log(2.0), 1e-15);
  EXPECT_NEAR(ad::softplus(x).scalar(), 0.693147, 1e-6);
}

TEST(ForwardEval, ZeroWeightMlpOutputsBiasPath) {
  std::mt19937_64 rng(1);
  Tape tape;
  Var x = tape.constant(random_matrix(4, 3, rng));
  Var w1 = tape.variable(Matrix::Zero(3, 5));
  Var b1 = tape.variable(random_matrix(1, 5, rng));
  Var w2 = tape.variable(Matrix::Zero(5, 2));
  Var b2 = tape.variable(random_matrix(1, 2, rng));
  Var h = ad::softplus(ad::matmul(x, w1) + b1);
  Var out = ad::matmul(h, w2) + b2;
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(out.value().row(i), b2.value().row(0));
  }
}

TEST(ForwardEval, LogAndSqrtRejectNonPositive) {
  Tape tape;
  Matrix m(1, 3);
  m << 1.0, 0.0, 2.0;
  Var x = tape.variable(m);
  EXPECT_THROW(ad::log(x), std::domain_error);
  EXPECT_THROW(ad::sqrt(x), std::domain_error);
  Var y = tape.variable(scalar(-1.0));
  EXPECT_THROW(ad::log(y), std::domain_error);
  EXPECT_THROW(ad::sqrt(y), std::domain_error);
}

TEST(ForwardEval, ShapeMismatchIsRejected) {
  Tape tape;
  Var a = tape.variable(Matrix::Zero(3, 2));
  Var b = tape.variable(Matrix::Zero(2, 2));
  EXPECT_THROW(ad::add(a, b), std::invalid_argument);
  EXPECT_THROW(ad::matmul(a, b.tape().variable(Matrix::Zero(3, 3))), std::invalid_argument);
}

TEST(BackwardGrad, SquareAtThree) {
  auto r = evaluate([](Tape&, Var x) { return ad::square(x); }, scalar(3.0));
  EXPECT_DOUBLE_EQ(r.grad(0, 0), 6.0);
}

TEST(BackwardGrad, SoftplusAtZeroIsHalf) {
  auto r = evaluate([](Tape&, Var x) { return ad::softplus(x); }, scalar(0.0));
  EXPECT_DOUBLE_EQ(r.grad(0, 0), 0.5);
}

TEST(BackwardGrad, ReluDerivativeAtZeroIsZero) {
  auto r = evaluate([](Tape&, Var x) { return ad::relu(x); }, scalar(0.0));
  EXPECT_EQ(r.grad(0, 0), 0.0);
}

TEST(BackwardGrad, UnreachedNodeHasZeroGradient) {
  Tape tape;
  Var x = tape.variable(scalar(2.0));
  Var unused = tape.variable(Matrix::Ones(2, 2));
  Var y = ad::exp(x);
  tape.backward(y);
  EXPECT_EQ(tape.grad(unused), Matrix::Zero(2, 2));
}

TEST(BackwardGrad, RandomMlpMatchesFiniteDifferences) {
  // 2 -> 200 -> 200 -> 1 with random weights; check inputs and a slice of every weight.
  std::mt19937_64 rng(11);
  const Matrix x0 = random_matrix(3, 2, rng);
  const Matrix w1 = random_matrix(2, 200, rng, 0.7);
  const Matrix b1 = random_matrix(1, 200, rng, 0.1);
  const Matrix w2 = random_matrix(200, 200, rng, 0.1);
  const Matrix b2 = random_matrix(1, 200, rng, 0.1);
  const Matrix w3 = random_matrix(200, 1, rng, 0.1);

  auto net = [&](Tape& t, Var x, const Matrix& w2v) {
    Var h1 = ad::tanh(ad::matmul(x, t.constant(w1)) + t.constant(b1));
    Var h2 = ad::softplus(ad::matmul(h1, t.constant(w2v)) + t.constant(b2));
    return ad::sum_all(ad::matmul(h2, t.constant(w3)));
  };

  auto r = evaluate([&](Tape& t, Var x) { return net(t, x, w2); }, x0);
  Matrix fd = central_difference([&](const Matrix& x) {
    return value_only([&](Tape& t, Var v) { return net(t, v, w2); }, x);
  }, x0, 1e-5);
  EXPECT_LT(max_relative_error(r.grad, fd), 1e-4);

  // Gradient with respect to the hidden-to-hidden weights (first 3 rows).
  Tape tape;
  Var w2v = tape.variable(w2);
  Var h1 = ad::tanh(ad::matmul(tape.constant(x0), tape.constant(w1)) + tape.constant(b1));
  Var h2 = ad::softplus(ad::matmul(h1, w2v) + tape.constant(b2));
  Var out = ad::sum_all(ad::matmul(h2, tape.constant(w3)));
  tape.backward(out);
  const Matrix gw = tape.grad(w2v);
  double worst = 0.0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 200; j += 7) {
      Matrix wp = w2, wm = w2;
      wp(i, j) += 1e-5;
      wm(i, j) -= 1e-5;
      auto f = [&](const Matrix& w) {
        return value_only([&](Tape& t, Var v) { return net(t, v, w); }, x0);
      };
      const double d = (f(wp) - f(wm)) / 2e-5;
      worst = std::max(worst, hmcvi::testing::relative_error(gw(i, j), d));
    }
  }
  EXPECT_LT(worst, 1e-4);
}

// Every elementary op against central differences at 50 random points.
struct OpCase {
  const char* name;
  std::function<Var(Tape&, Var)> build;
  std::function<Matrix(std::mt19937_64&)> point;
};

class ElementaryOp : public ::testing::TestWithParam<int> {};

std::vector<OpCase> op_cases() {
  auto any = [](std::mt19937_64& rng) { return random_matrix(3, 4, rng); };
  auto positive = [](std::mt19937_64& rng) {
    return Matrix(random_matrix(3, 4, rng).array().abs() + 0.2);
  };
  auto away_from_zero = [](std::mt19937_64& rng) {
    Matrix m = random_matrix(3, 4, rng);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      if (std::abs(m.data()[i]) < 1e-2) m.data()[i] = 0.5;
    }
    return m;
  };
  // Weighted sum so every output entry contributes distinctly.
  auto reduce = [](Var y) {
    Matrix w(y.rows(), y.cols());
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = std::sin(1.3 * i + 0.7 * j + 0.3) + 0.5;
    }
    return ad::sum_all(ad::mul(y, y.tape().constant(w)));
  };
  static const Matrix other = [] {
    std::mt19937_64 rng(7);
    return random_matrix(3, 4, rng);
  }();
  static const Matrix row = [] {
    std::mt19937_64 rng(8);
    return random_matrix(1, 4, rng);
  }();
  static const Matrix weight = [] {
    std::mt19937_64 rng(9);
    return random_matrix(4, 5, rng);
  }();

  return {
      {"add", [=](Tape& t, Var x) { return reduce(ad::add(x, t.constant(other))); }, any},
      {"add_row_broadcast", [=](Tape& t, Var x) {
         return reduce(ad::add(t.constant(other), ad::slice_cols(x, 0, 4) * 1.0 +
                                                      t.constant(row)));
       }, any},
      {"sub", [=](Tape& t, Var x) { return reduce(ad::sub(t.constant(other), x)); }, any},
      {"mul", [=](Tape& t, Var x) { return reduce(ad::mul(x, x + t.constant(other))); }, any},
      {"mul_column_broadcast", [=](Tape& t, Var x) {
         return reduce(ad::mul(t.constant(other), ad::sum_rows(x)));
       }, any},
      {"neg", [=](Tape&, Var x) { return reduce(ad::neg(x)); }, any},
      {"exp", [=](Tape&, Var x) { return reduce(ad::exp(x)); }, any},
      {"log", [=](Tape&, Var x) { return reduce(ad::log(x)); }, positive},
      {"sqrt", [=](Tape&, Var x) { return reduce(ad::sqrt(x)); }, positive},
      {"tanh", [=](Tape&, Var x) { return reduce(ad::tanh(x)); }, any},
      {"sigmoid", [=](Tape&, Var x) { return reduce(ad::sigmoid(x)); }, any},
      {"softplus", [=](Tape&, Var x) { return reduce(ad::softplus(x)); }, any},
      {"relu", [=](Tape&, Var x) { return reduce(ad::relu(x)); }, away_from_zero},
      {"matmul", [=](Tape& t, Var x) { return reduce(ad::matmul(x, t.constant(weight))); }, any},
      {"matmul_weight", [=](Tape& t, Var x) {
         // x plays the (in x out) weight: 3 x 4, input is 2 x 3.
         return reduce(ad::matmul(t.constant(Matrix(other.topLeftCorner(2, 3))), x));
       }, any},
      {"matmul_t", [=](Tape& t, Var x) {
         return reduce(ad::matmul_t(x, t.constant(Matrix(weight.transpose()))));
       }, any},
      {"matmul_t_weight", [=](Tape& t, Var x) {
         // x plays the (in x out) weight: 3 x 4, input is 2 x 4.
         Matrix in = other.topRows(2);
         return reduce(ad::matmul_t(t.constant(in), x));
       }, any},
      {"dot_rows", [=](Tape& t, Var x) { return reduce(ad::dot_rows(x, ad::exp(x) + t.constant(other))); }, any},
      {"sum_rows", [=](Tape&, Var x) { return reduce(ad::sum_rows(ad::square(x))); }, any},
      {"sum_all", [=](Tape&, Var x) { return ad::sum_all(ad::tanh(x)); }, any},
      {"concat_cols", [=](Tape& t, Var x) {
         return reduce(ad::concat_cols({ad::slice_cols(x, 1, 2), t.constant(row.leftCols(1)),
                                        ad::exp(ad::slice_cols(x, 0, 1))}));
       }, any},
      {"slice_cols", [=](Tape&, Var x) { return reduce(ad::square(ad::slice_cols(x, 1, 3))); }, any},
      {"select", [=](Tape& t, Var x) {
         Matrix mask(3, 1);
         mask << 1, 0, 1;
         return reduce(ad::select(mask, ad::exp(x), ad::square(x) + t.constant(other)));
       }, any},
      {"clamp", [=](Tape&, Var x) { return reduce(ad::clamp(x, -0.75, 0.8)); },
       [](std::mt19937_64& rng) {
         Matrix m = random_matrix(3, 4, rng);
         for (Eigen::Index i = 0; i < m.size(); ++i) {
           double& v = m.data()[i];
           if (std::abs(v + 0.75) < 1e-2 || std::abs(v - 0.8) < 1e-2) v = 0.1;
         }
         return m;
       }},
  };
}

TEST_P(ElementaryOp, MatchesCentralDifferences) {
  const auto cases = op_cases();
  const OpCase& c = cases[static_cast<std::size_t>(GetParam())];
  std::mt19937_64 rng(1234 + GetParam());
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix x = c.point(rng);
    auto r = evaluate(c.build, x);
    Matrix fd = central_difference([&](const Matrix& p) { return value_only(c.build, p); }, x, 1e-6);
    worst = std::max(worst, max_relative_error(r.grad, fd, 1e-6));
  }
  EXPECT_LT(worst, 1e-4) << c.name;
}

INSTANTIATE_TEST_SUITE_P(AllOps, ElementaryOp,
                         ::testing::Range(0, static_cast<int>(op_cases().size())),
                         [](const ::testing::TestParamInfo<int>& info) {
                           return std::string(op_cases()[static_cast<std::size_t>(info.param)].name);
                         });

TEST(Properties, GradientOfSumIsSumOfGradients) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix x0 = random_matrix(2, 3, rng);
    const Matrix w = random_matrix(3, 3, rng);
    auto f = [&](Tape& t, Var x) { return ad::sum_all(ad::tanh(ad::matmul(x, t.constant(w)))); };
    auto g = [&](Tape&, Var x) { return ad::sum_all(ad::softplus(x) * ad::sigmoid(x)); };
    auto both = evaluate([&](Tape& t, Var x) { return f(t, x) + g(t, x); }, x0);
    auto a = evaluate(f, x0);
    auto b = evaluate(g, x0);
    EXPECT_LT(max_relative_error(both.grad, a.grad + b.grad, 1e-12), 1e-12);
  }
}

TEST(Properties, ReevaluationIsBitIdentical) {
  std::mt19937_64 rng(6);
  const Matrix x0 = random_matrix(5, 4, rng);
  const Matrix w = random_matrix(4, 4, rng);
  auto f = [&](Tape& t, Var x) {
    Var h = ad::softplus(ad::matmul(x, t.constant(w)));
    return ad::sum_all(ad::log(ad::exp(h) + 1.0) * ad::tanh(x));
  };
  auto a = evaluate(f, x0);
  auto b = evaluate(f, x0);
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(a.grad, b.grad);
}

TEST(Params, TapeBindsNamedParameters) {
  ad::ParamStore store;
  store.add("w", Matrix::Constant(1, 1, 2.0));
  Tape tape(&store);
  Var w = tape.param("w");
  EXPECT_EQ(tape.param("w").id(), w.id());
  tape.backward(ad::square(w) * 3.0);
  auto grads = tape.param_grads();
  ASSERT_EQ(grads.count("w"), 1u);
  EXPECT_DOUBLE_EQ(grads["w"](0, 0), 12.0);
}

TEST(Params, FrozenParametersReceiveNoGradient) {
  ad::ParamStore store;
  store.add("a", Matrix::Constant(1, 1, 2.0));
  store.add("b", Matrix::Constant(1, 1, 3.0));
  store.freeze("b");
  Tape tape(&store);
  tape.backward(tape.param("a") * tape.param("b"));
  auto grads = tape.param_grads();
  EXPECT_EQ(grads.count("b"), 0u);
  EXPECT_DOUBLE_EQ(grads["a"](0, 0), 3.0);
}

TEST(AdamStep, ZeroGradientLeavesParametersAndDecaysMoments) {
  ad::ParamStore store;
  store.add("w", Matrix::Constant(2, 2, 1.5));
  ad::adam_step(store, {{"w", Matrix::Constant(2, 2, 0.0)}}, 1e-2);
  EXPECT_EQ(store.value("w"), Matrix::Constant(2, 2, 1.5));

  // Build up moments, then feed zeros: the moments shrink geometrically.
  ad::ParamStore s2;
  s2.add("w", Matrix::Constant(1, 1, 0.0));
  ad::adam_step(s2, {{"w", Matrix::Constant(1, 1, 1.0)}}, 1e-2);
  const double m1 = s2.entry("w").first_moment(0, 0);
  const double v1 = s2.entry("w").second_moment(0, 0);
  ad::adam_step(s2, {{"w", Matrix::Constant(1, 1, 0.0)}}, 1e-2);
  EXPECT_NEAR(s2.entry("w").first_moment(0, 0), 0.9 * m1, 1e-15);
  EXPECT_NEAR(s2.entry("w").second_moment(0, 0), 0.999 * v1, 1e-15);
}

TEST(AdamStep, FirstStepMovesByLearningRate) {
  for (double g : {1e-6, 0.3, -5.0, 1e4}) {
    ad::ParamStore store;
    store.add("w", Matrix::Constant(1, 1, 1.0));
    ad::adam_step(store, {{"w", Matrix::Constant(1, 1, g)}}, 1e-2);
    const double delta = store.value("w")(0, 0) - 1.0;
    EXPECT_NEAR(std::abs(delta), 1e-2, 1e-2 * 1e-2) << "g=" << g;
    EXPECT_LT(delta * g, 0.0);
  }
}

TEST(AdamStep, QuadraticLossDecreasesMonotonically) {
  // Loss (w - 3)^2 from w = 0; lr 1e-2 for 100 steps never overshoots.
  ad::ParamStore store;
  store.add("w", Matrix::Constant(1, 1, 0.0));
  double prev = 9.0;
  for (int i = 0; i < 100; ++i) {
    Tape tape(&store);
    Var w = tape.param("w");
    Var loss = ad::square(w - 3.0);
    tape.backward(loss);
    ad::adam_step(store, tape.param_grads(), 1e-2);
    const double now = std::pow(store.value("w")(0, 0) - 3.0, 2);
    EXPECT_LT(now, prev) << "step " << i;
    prev = now;
  }
  EXPECT_EQ(store.step(), 100u);
}

TEST(AdamStep, NonFiniteGradientRejectsStep) {
  ad::ParamStore store;
  store.add("a", Matrix::Constant(1, 2, 1.0));
  store.add("b", Matrix::Constant(1, 1, 1.0));
  Matrix bad(1, 2);
  bad << 1.0, std::nan("");
  auto report = ad::adam_step(store, {{"a", bad}, {"b", Matrix::Constant(1, 1, 1.0)}}, 0.1);
  EXPECT_FALSE(report.applied);
  ASSERT_EQ(report.non_finite.size(), 1u);
  EXPECT_EQ(report.non_finite[0], "a");
  EXPECT_EQ(store.value("b")(0, 0), 1.0);
  EXPECT_EQ(store.step(), 0u);
}

TEST(AdamStep, ClippingBoundsTheEffectiveGradient) {
  ad::ParamStore store;
  store.add("w", Matrix::Constant(1, 1, 0.0));
  ad::AdamOptions opt;
  opt.clip_norm = 100.0;
  auto report = ad::adam_step(store, {{"w", Matrix::Constant(1, 1, 1e6)}}, 1e-3, opt);
  EXPECT_TRUE(report.clipped);
  EXPECT_NEAR(store.entry("w").first_moment(0, 0), 0.1 * 100.0, 1e-9);
}

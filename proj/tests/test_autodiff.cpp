#include <gtest/gtest.h>

#include <cmath>

#include "spen/autodiff.hpp"
#include "spen/gradcheck.hpp"
#include "spen/optim.hpp"
#include "spen/rng.hpp"

using namespace spen;
using ad::Tape;
using ad::Tensor;
using ad::TensorPtr;

TEST(Tape, SoftmaxOfZerosIsUniform) {
  Tape tape;
  auto y = tape.softmax(tape.constant({3}, {0.0, 0.0, 0.0}));
  for (double v : tape.value(y)) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Tape, SoftmaxSumsToOneAndStaysPositive) {
  Rng rng(7);
  for (int it = 0; it < 50; ++it) {
    Tape tape;
    std::vector<double> x(5);
    for (double& v : x) v = rng.uniform(-40.0, 40.0);
    auto y = tape.softmax(tape.constant({5}, x));
    double total = 0.0;
    for (double v : tape.value(y)) {
      EXPECT_GT(v, 0.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

TEST(Tape, LogSumExpClosedForm) {
  Tape tape;
  auto l = tape.logsumexp(tape.constant({2}, {0.0, 0.0}));
  EXPECT_NEAR(tape.scalar(l), std::log(2.0), 1e-12);
}

TEST(Tape, SoftplusAtZero) {
  Tape tape;
  auto s = tape.softplus(tape.constant_scalar(0.0));
  EXPECT_NEAR(tape.scalar(s), std::log(2.0), 1e-12);
}

TEST(Tape, SigmoidGradientAtZero) {
  auto x = ad::make_param("x", {1});
  Tape tape;
  auto out = tape.sigmoid(tape.leaf(x));
  tape.backward(out);
  EXPECT_NEAR(x->grad[0], 0.25, 1e-12);
}

TEST(Tape, QuadraticGradient) {
  auto x = ad::make_param("x", {2});
  x->data = {1.0, 2.0};
  Tape tape;
  auto xn = tape.leaf(x);
  tape.backward(tape.dot(xn, xn));
  EXPECT_NEAR(x->grad[0], 2.0, 1e-12);
  EXPECT_NEAR(x->grad[1], 4.0, 1e-12);
}

TEST(Tape, LogSumExpGradientIsSoftmax) {
  auto v = ad::make_param("v", {2});
  v->data = {1.0, 0.0};
  Tape tape;
  tape.backward(tape.logsumexp(tape.leaf(v)));
  double z = std::exp(1.0) + 1.0;
  EXPECT_NEAR(v->grad[0], std::exp(1.0) / z, 1e-12);
  EXPECT_NEAR(v->grad[1], 1.0 / z, 1e-12);
}

TEST(Tape, EvalIsPure) {
  Rng rng(3);
  auto w = ad::make_param("w", {4, 3});
  ad::init_uniform(*w, 3, 4, rng);
  std::vector<double> x = {0.3, -0.7, 1.1};

  auto run = [&] {
    Tape tape;
    auto out = tape.tanh_(tape.matvec(tape.leaf(w), tape.constant({3}, x)));
    return tape.value(out);
  };
  auto a = run();
  auto b = run();
  for (size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i], b[i]);  // bitwise
  }
}

TEST(Tape, ShapeMismatchNamesOpAndShapes) {
  Tape tape;
  auto a = tape.constant({2}, {1.0, 2.0});
  auto b = tape.constant({3}, {1.0, 2.0, 3.0});
  try {
    tape.add(a, b);
    FAIL() << "expected shape error";
  } catch (const NumericError& e) {
    std::string m = e.what();
    EXPECT_NE(m.find("add"), std::string::npos);
    EXPECT_NE(m.find("[2]"), std::string::npos);
    EXPECT_NE(m.find("[3]"), std::string::npos);
  }
}

TEST(Tape, BackwardOnNonScalarFails) {
  Tape tape;
  auto a = tape.constant({2}, {1.0, 2.0});
  EXPECT_THROW(tape.backward(a), NumericError);
}

TEST(Tape, MatmulMatchesHandComputation) {
  Tape tape;
  auto a = tape.constant({2, 2}, {1.0, 2.0, 3.0, 4.0});
  auto b = tape.constant({2, 2}, {5.0, 6.0, 7.0, 8.0});
  auto c = tape.matmul(a, b);
  const auto& v = tape.value(c);
  EXPECT_NEAR(v[0], 19.0, 1e-12);
  EXPECT_NEAR(v[1], 22.0, 1e-12);
  EXPECT_NEAR(v[2], 43.0, 1e-12);
  EXPECT_NEAR(v[3], 50.0, 1e-12);
}

TEST(Tape, ConcatSliceRoundTripGradients) {
  auto a = ad::make_param("a", {2});
  auto b = ad::make_param("b", {3});
  a->data = {1.0, 2.0};
  b->data = {3.0, 4.0, 5.0};
  Tape tape;
  auto cat = tape.concat(tape.leaf(a), tape.leaf(b));
  auto mid = tape.slice(cat, 1, 3);  // [2, 3, 4]
  tape.backward(tape.sum(mid));
  EXPECT_EQ(a->grad[0], 0.0);
  EXPECT_EQ(a->grad[1], 1.0);
  EXPECT_EQ(b->grad[0], 1.0);
  EXPECT_EQ(b->grad[1], 1.0);
  EXPECT_EQ(b->grad[2], 0.0);
}

TEST(GradCheck, QuadraticFormIsExact) {
  Rng rng(11);
  auto x = ad::make_param("x", {4});
  for (double& v : x->data) v = rng.uniform(-1.0, 1.0);
  std::vector<double> a_mat(16);
  for (double& v : a_mat) v = rng.uniform(-1.0, 1.0);

  auto build = [&](Tape& tape) {
    auto xn = tape.leaf(x);
    auto an = tape.constant({4, 4}, a_mat);
    return tape.dot(xn, tape.matvec(an, xn));
  };
  TensorPtr params[] = {x};
  EXPECT_LT(ad::finite_diff_check(build, params, 1e-5), 1e-6);
}

TEST(GradCheck, TwoLayerMlpWithSquaredLoss) {
  Rng rng(13);
  auto w1 = ad::make_param("w1", {5, 3});
  auto b1 = ad::make_param("b1", {5});
  auto w2 = ad::make_param("w2", {2, 5});
  auto b2 = ad::make_param("b2", {2});
  ad::init_uniform(*w1, 3, 5, rng);
  ad::init_uniform(*w2, 5, 2, rng);
  std::vector<double> x = {0.2, -0.4, 0.9};
  std::vector<double> target = {0.3, 0.8};

  auto build = [&](Tape& tape) {
    auto h = tape.tanh_(tape.add(tape.matvec(tape.leaf(w1), tape.constant({3}, x)), tape.leaf(b1)));
    auto y = tape.sigmoid(tape.add(tape.matvec(tape.leaf(w2), h), tape.leaf(b2)));
    auto diff = tape.sub(y, tape.constant({2}, target));
    return tape.dot(diff, diff);
  };
  TensorPtr params[] = {w1, b1, w2, b2};
  EXPECT_LT(ad::finite_diff_check(build, params, 1e-5), 1e-4);
}

TEST(GradCheck, EpsilonRangeEnforced) {
  auto x = ad::make_param("x", {1});
  auto build = [&](Tape& tape) { return tape.sum(tape.leaf(x)); };
  TensorPtr params[] = {x};
  EXPECT_THROW(ad::finite_diff_check(build, params, 1e-8), NumericError);
  EXPECT_THROW(ad::finite_diff_check(build, params, 1e-2), NumericError);
}

TEST(Adam, FirstStepIsSignedLearningRate) {
  auto p = ad::make_param("p", {2});
  p->data = {1.0, -1.0};
  p->grad = {0.5, -2.0};
  Optimizer opt({.kind = OptKind::adam, .lr = 0.001});
  TensorPtr params[] = {p};
  opt.step(params);
  EXPECT_NEAR(p->data[0], 1.0 - 0.001, 1e-6);
  EXPECT_NEAR(p->data[1], -1.0 + 0.001, 1e-6);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  auto p = ad::make_param("p", {3});
  p->data = {1.0, 2.0, 3.0};
  p->zero_grad();
  Optimizer opt({.kind = OptKind::adam, .lr = 0.1});
  TensorPtr params[] = {p};
  opt.step(params);
  EXPECT_EQ(p->data[0], 1.0);
  EXPECT_EQ(p->data[1], 2.0);
  EXPECT_EQ(p->data[2], 3.0);
}

TEST(Adam, ConstantGradientStepsDoNotGrow) {
  auto p = ad::make_param("p", {1});
  p->data = {0.0};
  Optimizer opt({.kind = OptKind::adam, .lr = 0.001});
  TensorPtr params[] = {p};

  p->grad = {0.7};
  opt.step(params);
  double first = std::fabs(p->data[0]);
  double before = p->data[0];
  p->grad = {0.7};
  opt.step(params);
  double second = std::fabs(p->data[0] - before);
  EXPECT_LE(second, first + 1e-9);
}

TEST(Adam, NanGradientAborts) {
  auto p = ad::make_param("p", {1});
  p->grad = {std::nan("")};
  Optimizer opt({.kind = OptKind::adam});
  TensorPtr params[] = {p};
  EXPECT_THROW(opt.step(params), NumericError);
}

TEST(SgdMomentum, ZeroMomentumIsPlainSgd) {
  auto p = ad::make_param("p", {1});
  p->data = {1.0};
  p->grad = {1.0};
  Optimizer opt({.kind = OptKind::sgd_momentum, .lr = 0.1, .momentum = 0.0});
  TensorPtr params[] = {p};
  opt.step(params);
  EXPECT_NEAR(p->data[0], 0.9, 1e-12);
}

TEST(SgdMomentum, StepApproachesGeometricLimit) {
  auto p = ad::make_param("p", {1});
  p->data = {0.0};
  Optimizer opt({.kind = OptKind::sgd_momentum, .lr = 0.01, .momentum = 0.9});
  TensorPtr params[] = {p};
  double prev = 0.0;
  double step = 0.0;
  for (int i = 0; i < 500; ++i) {
    p->grad = {1.0};
    opt.step(params);
    step = std::fabs(p->data[0] - prev);
    prev = p->data[0];
  }
  EXPECT_NEAR(step, 0.01 / (1.0 - 0.9), 1e-6);
}

TEST(SgdMomentum, ZeroGradientZeroVelocityNoChange) {
  auto p = ad::make_param("p", {2});
  p->data = {4.0, -4.0};
  p->zero_grad();
  Optimizer opt({.kind = OptKind::sgd_momentum, .lr = 0.1, .momentum = 0.9});
  TensorPtr params[] = {p};
  opt.step(params);
  EXPECT_EQ(p->data[0], 4.0);
  EXPECT_EQ(p->data[1], -4.0);
}

TEST(ParamHash, DetectsSingleEntryChange) {
  auto p = ad::make_param("p", {4});
  p->data = {1.0, 2.0, 3.0, 4.0};
  TensorPtr params[] = {p};
  uint64_t before = ad::param_hash(params);
  p->data[2] += 1e-15;
  EXPECT_NE(ad::param_hash(params), before);
}

#include <gtest/gtest.h>

#include <cmath>

#include "spen/losses.hpp"
#include "spen/rng.hpp"

using namespace spen;
using ad::Tape;

TEST(Cost, L1OnIdenticalOneHotSequencesIsZero) {
  auto a = to_relaxed(TagSeq{0, 1, 2}, 3);
  EXPECT_DOUBLE_EQ(cost_value(CostKind::l1, a, a), 0.0);
}

TEST(Cost, L1CountsTwoPerDifferingPosition) {
  auto a = to_relaxed(TagSeq{0, 1, 2, 0}, 3);
  auto b = to_relaxed(TagSeq{0, 2, 1, 0}, 3);
  EXPECT_DOUBLE_EQ(cost_value(CostKind::l1, a, b), 4.0);  // k = 2 positions differ
}

TEST(Cost, SquaredL2HandValue) {
  auto pred = RelaxedOutput::mlc({0.5, 0.5});
  auto gold = to_relaxed(LabelSet{0}, 2);
  EXPECT_DOUBLE_EQ(cost_value(CostKind::squared_l2, pred, gold), 0.5);
}

TEST(Cost, ZeroAndOneKinds) {
  auto pred = RelaxedOutput::mlc({0.3, 0.9});
  auto gold = to_relaxed(LabelSet{1}, 2);
  EXPECT_DOUBLE_EQ(cost_value(CostKind::zero, pred, gold), 0.0);
  EXPECT_DOUBLE_EQ(cost_value(CostKind::one, pred, gold), 1.0);
}

TEST(Cost, NonnegativeOnRandomInputs) {
  Rng rng(3);
  for (int it = 0; it < 100; ++it) {
    std::vector<double> p(4), g(4);
    for (double& v : p) v = rng.uniform();
    for (double& v : g) v = rng.below(2);
    auto pred = RelaxedOutput::mlc(p);
    auto gold = RelaxedOutput::mlc(g);
    EXPECT_GE(cost_value(CostKind::l1, pred, gold), 0.0);
    EXPECT_GE(cost_value(CostKind::squared_l2, pred, gold), 0.0);
  }
}

TEST(Hinge, PerceptronZeroAtEqualEnergies) {
  EXPECT_DOUBLE_EQ(hinge_value(HingeKind::perceptron, 0.0, -2.5, -2.5), 0.0);
}

TEST(Hinge, ContrastiveOneAtEqualEnergies) {
  EXPECT_DOUBLE_EQ(hinge_value(HingeKind::contrastive, 1.0, 0.7, 0.7), 1.0);
}

TEST(Hinge, MarginAndSlackHandValues) {
  // MR: [2 - (-1) + (-4)]_+ = 0 ; SR: 2 * [1 - (-1) + (-4)]_+ = 0.
  EXPECT_DOUBLE_EQ(hinge_value(HingeKind::margin_rescaled, 2.0, -1.0, -4.0), 0.0);
  EXPECT_DOUBLE_EQ(hinge_value(HingeKind::slack_rescaled, 2.0, -1.0, -4.0), 0.0);
  // Active case: MR: [1 + 2 - 1]_+ = 2 ; SR: 1 * [1 + 2 - 1]_+ = 2.
  EXPECT_DOUBLE_EQ(hinge_value(HingeKind::margin_rescaled, 1.0, -2.0, -1.0), 2.0);
  EXPECT_DOUBLE_EQ(hinge_value(HingeKind::slack_rescaled, 1.0, -2.0, -1.0), 2.0);
}

TEST(Hinge, PerceptronEqualsMarginRescaledWithZeroCost) {
  Rng rng(11);
  for (int it = 0; it < 1000; ++it) {
    double ep = rng.uniform(-10, 10), eg = rng.uniform(-10, 10);
    EXPECT_NEAR(hinge_value(HingeKind::perceptron, 0.0, ep, eg),
                hinge_value(HingeKind::margin_rescaled, 0.0, ep, eg), 1e-12);
  }
}

TEST(Hinge, ContrastiveEqualsMarginRescaledWithUnitCost) {
  Rng rng(12);
  for (int it = 0; it < 1000; ++it) {
    double ep = rng.uniform(-10, 10), eg = rng.uniform(-10, 10);
    EXPECT_NEAR(hinge_value(HingeKind::contrastive, 1.0, ep, eg),
                hinge_value(HingeKind::margin_rescaled, 1.0, ep, eg), 1e-12);
    EXPECT_NEAR(hinge_value(HingeKind::contrastive, 1.0, ep, eg),
                hinge_value(HingeKind::slack_rescaled, 1.0, ep, eg), 1e-12);
  }
}

TEST(Hinge, InvariantToCommonEnergyShift) {
  Rng rng(13);
  for (int it = 0; it < 200; ++it) {
    double delta = rng.uniform(0, 4);
    double ep = rng.uniform(-5, 5), eg = rng.uniform(-5, 5), c = rng.uniform(-20, 20);
    for (auto kind : {HingeKind::margin_rescaled, HingeKind::slack_rescaled}) {
      EXPECT_NEAR(hinge_value(kind, delta, ep, eg), hinge_value(kind, delta, ep + c, eg + c),
                  1e-10);
    }
  }
}

TEST(Hinge, NonnegativeAlways) {
  Rng rng(14);
  for (int it = 0; it < 500; ++it) {
    double delta = rng.uniform(0, 3), ep = rng.uniform(-9, 9), eg = rng.uniform(-9, 9);
    for (auto kind : {HingeKind::margin_rescaled, HingeKind::slack_rescaled,
                      HingeKind::perceptron, HingeKind::contrastive}) {
      EXPECT_GE(hinge_value(kind, delta, ep, eg), 0.0);
    }
  }
}

TEST(Entropy, MlcAllHalfIsLLogTwo) {
  Tape tape;
  size_t l = 7;
  auto y = tape.constant({l}, std::vector<double>(l, 0.5));
  EXPECT_NEAR(tape.scalar(entropy_mlc_node(tape, y)), static_cast<double>(l) * std::log(2.0),
              1e-12);
}

TEST(Entropy, UniformSequenceRowIsLogL) {
  Tape tape;
  size_t l = 25;
  std::vector<Tape::Id> rows = {tape.constant({l}, std::vector<double>(l, 1.0 / 25.0))};
  EXPECT_NEAR(tape.scalar(entropy_seq_node(tape, rows)), std::log(25.0), 1e-12);
}

TEST(Entropy, HigherForMoreUniformOutputs) {
  Tape t1, t2;
  auto peaked = t1.constant({3}, {0.9, 0.05, 0.05});
  auto flat = t2.constant({3}, {0.34, 0.33, 0.33});
  std::vector<Tape::Id> r1 = {peaked}, r2 = {flat};
  EXPECT_LT(t1.scalar(entropy_seq_node(t1, r1)), t2.scalar(entropy_seq_node(t2, r2)));
}

TEST(CrossEntropy, SequencePicksGoldProbabilities) {
  Tape tape;
  std::vector<Tape::Id> rows = {tape.constant({2}, {0.8, 0.2}),
                                tape.constant({2}, {0.4, 0.6})};
  double expected = -std::log(0.8) - std::log(0.6);
  EXPECT_NEAR(tape.scalar(ce_seq_node(tape, rows, TagSeq{0, 1})), expected, 1e-12);
}

TEST(L2Terms, DistanceToSelfIsZero) {
  auto p = ad::make_param("p", {3});
  p->data = {1.0, -2.0, 3.0};
  std::vector<ad::TensorPtr> params = {p};
  auto anchor = snapshot(params);
  Tape tape;
  EXPECT_DOUBLE_EQ(tape.scalar(l2_distance_node(tape, params, anchor)), 0.0);
  EXPECT_DOUBLE_EQ(tape.scalar(l2_node(tape, params)), 14.0);
}

TEST(EffectiveCost, HingeKindsPinTheirCosts) {
  EXPECT_EQ(effective_cost(HingeKind::perceptron, CostKind::l1), CostKind::zero);
  EXPECT_EQ(effective_cost(HingeKind::contrastive, CostKind::l1), CostKind::one);
  EXPECT_EQ(effective_cost(HingeKind::margin_rescaled, CostKind::l1), CostKind::l1);
  EXPECT_EQ(effective_cost(HingeKind::slack_rescaled, CostKind::squared_l2),
            CostKind::squared_l2);
}

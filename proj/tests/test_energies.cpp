#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "spen/energies.hpp"
#include "spen/gradcheck.hpp"
#include "spen/inference.hpp"
#include "testutil.hpp"

using namespace spen;
using ad::Tape;

namespace {

MLCEnergy small_mlc(size_t n_labels, size_t lab_hidden, uint64_t seed, size_t in_dim = 6,
                    size_t f_dim = 5) {
  Rng rng(seed);
  MLP feature("f", {in_dim, 7, f_dim}, Head::linear, rng);
  return MLCEnergy(std::move(feature), n_labels, lab_hidden, rng);
}

SparseVec dense_input(const std::vector<double>& x) {
  SparseVec s;
  s.dim = x.size();
  for (size_t i = 0; i < x.size(); ++i) s.items.emplace_back(i, x[i]);
  return s;
}

}  // namespace

TEST(MlcEnergy, AllZeroOutputGivesLabelTermOnly) {
  size_t h = 4;
  auto energy = small_mlc(3, h, 1);
  std::fill(energy.c2()->data.begin(), energy.c2()->data.end(), 1.0);
  SparseVec x = dense_input({0.5, -0.5, 1.0, 0.0, 2.0, -1.0});
  RelaxedOutput y = RelaxedOutput::mlc({0.0, 0.0, 0.0});
  // E_loc vanishes (linear in y) and E_lab = sum softplus(0) = h ln 2.
  EXPECT_NEAR(energy.energy_value(x, y), static_cast<double>(h) * std::log(2.0), 1e-12);
}

TEST(MlcEnergy, LocalTermIsLinearInY) {
  auto energy = small_mlc(4, 3, 2);
  std::fill(energy.c1()->data.begin(), energy.c1()->data.end(), 0.0);
  std::fill(energy.c2()->data.begin(), energy.c2()->data.end(), 0.0);
  SparseVec x = dense_input({1.0, 0.2, -0.3, 0.4, 0.0, 0.7});
  std::vector<double> y = {0.1, 0.4, 0.2, 0.3};
  std::vector<double> y2 = {0.2, 0.8, 0.4, 0.6};
  Tape t1, t2;
  double e1 = t1.scalar(energy.energy(t1, x, t1.constant({4}, y)));
  double e2 = t2.scalar(energy.energy(t2, x, t2.constant({4}, y2), /*validate=*/false));
  EXPECT_NEAR(e2, 2.0 * e1, 1e-12);
}

TEST(MlcEnergy, HandComputedTwoLabelCase) {
  // F(x) = [1, -1], b_1 = [1, 0], b_2 = [0, 1], C1 = 0 -> E(x, [1,1]) = 0.
  Rng rng(3);
  MLP feature("f", {2, 2, 2}, Head::linear, rng);
  MLCEnergy energy(std::move(feature), 2, 2, rng);
  std::fill(energy.c1()->data.begin(), energy.c1()->data.end(), 0.0);
  std::fill(energy.c2()->data.begin(), energy.c2()->data.end(), 0.0);
  energy.label_b()->data = {1.0, 0.0, 0.0, 1.0};

  SparseVec x = dense_input({0.3, 0.9});
  Tape tape;
  auto fx = tape.constant({2}, {1.0, -1.0});  // pin the feature vector directly
  auto y = tape.constant({2}, {1.0, 1.0});
  EXPECT_NEAR(tape.scalar(energy.energy(tape, fx, y)), 0.0, 1e-12);
}

TEST(MlcEnergy, RejectsOutOfRangeY) {
  auto energy = small_mlc(3, 4, 5);
  SparseVec x = dense_input({0.1, 0.2, 0.3, 0.4, 0.5, 0.6});
  Tape tape;
  auto y = tape.constant({3}, {0.5, 1.2, 0.0});
  EXPECT_THROW(energy.energy(tape, x, y), NumericError);
}

TEST(MlcEnergy, GradientMatchesFiniteDifferences) {
  auto energy = small_mlc(3, 4, 7);
  SparseVec x = dense_input({0.2, -0.1, 0.5, 0.3, -0.4, 0.8});
  auto y = ad::make_param("y", {3});
  y->data = {0.3, 0.6, 0.1};

  auto build = [&](Tape& tape) { return energy.energy(tape, x, tape.leaf(y)); };
  auto params = energy.all_params();
  params.push_back(y);
  EXPECT_LT(ad::finite_diff_check(build, params, 1e-5), 1e-4);
}

TEST(ChainEnergy, ZeroParametersGiveZeroEnergy) {
  auto fix = testutil::tiny_chain(3, 2, 11);
  std::fill(fix.energy.label_u()->data.begin(), fix.energy.label_u()->data.end(), 0.0);
  std::fill(fix.energy.transition()->data.begin(), fix.energy.transition()->data.end(), 0.0);
  Rng rng(1);
  std::vector<std::vector<double>> rows;
  for (int t = 0; t < 3; ++t) rows.push_back(testutil::random_simplex(2, rng));
  EXPECT_NEAR(fix.energy.relaxed_energy_value(fix.tokens, RelaxedOutput::seq(rows)), 0.0,
              1e-12);
}

TEST(ChainEnergy, OneHotEqualsDiscreteExactly) {
  for (uint64_t seed : {21, 22, 23}) {
    auto fix = testutil::tiny_chain(4, 3, seed);
    for (const auto& tags : oracle::all_labelings(4, 3)) {
      double relaxed = fix.energy.relaxed_energy_value(fix.tokens, to_relaxed(tags, 3));
      double discrete = fix.energy.discrete_energy(fix.tokens, tags);
      EXPECT_NEAR(relaxed, discrete, 1e-12);
    }
  }
}

TEST(ChainEnergy, HandComputedTwoByTwo) {
  // Unary rows [[1,0],[0,1]] and W = [[0,1],[1,0]]: labeling (0,1) scores
  // 1 + 1 + W[0][1] = 3, so its energy is -3 and every other labeling is worse.
  std::vector<std::vector<double>> unary = {{1.0, 0.0}, {0.0, 1.0}};
  std::vector<double> w = {0.0, 1.0, 1.0, 0.0};
  auto brute = oracle::brute_force_argmax(unary, w, 2);
  EXPECT_EQ(brute.tags, (TagSeq{0, 1}));
  EXPECT_NEAR(brute.score, 3.0, 1e-12);

  auto vit = viterbi(unary, w, 2);
  EXPECT_EQ(vit.tags, brute.tags);
  EXPECT_NEAR(vit.score, 3.0, 1e-12);
}

TEST(ChainEnergy, LengthMismatchFails) {
  auto fix = testutil::tiny_chain(3, 2, 31);
  Tape tape;
  std::vector<Tape::Id> ys = {tape.constant({2}, {1.0, 0.0}),
                              tape.constant({2}, {0.0, 1.0})};
  EXPECT_THROW(fix.energy.energy(tape, fix.tokens, ys), NumericError);
}

TEST(ChainEnergy, RelaxedGradientMatchesFiniteDifferences) {
  auto fix = testutil::tiny_chain(4, 3, 41);
  Rng rng(5);
  std::vector<ad::TensorPtr> ys;
  for (int t = 0; t < 4; ++t) {
    auto y = ad::make_param(msg_cat("y", t), {3});
    y->data = testutil::random_simplex(3, rng);
    ys.push_back(y);
  }
  auto build = [&](Tape& tape) {
    std::vector<Tape::Id> nodes;
    for (auto& y : ys) nodes.push_back(tape.leaf(y));
    return fix.energy.energy(tape, fix.tokens, nodes, /*validate=*/false);
  };
  auto params = fix.energy.params();
  params += ys;
  EXPECT_LT(ad::finite_diff_check(build, params, 1e-5), 1e-4);
}

TEST(TlmEnergy, UniformLmHasClosedFormEnergy) {
  // With zero parameters every step is uniform over the L tags plus the end
  // symbol, so each of the N+1 terms contributes ln(L+1).
  Rng rng(51);
  size_t l = 3;
  TagLMCell lm("lm", l, 4, 1, rng);
  for (auto& p : lm.params()) std::fill(p->data.begin(), p->data.end(), 0.0);
  TLMEnergy energy(std::move(lm));
  RelaxedOutput y = to_relaxed(TagSeq{0, 2, 1, 1}, l);
  EXPECT_NEAR(energy.energy_value(y), 5.0 * std::log(static_cast<double>(l + 1)), 1e-12);
}

TEST(TlmEnergy, OneHotEqualsSequenceNll) {
  Rng rng(52);
  TagLMCell lm("lm", 4, 6, 2, rng);
  TLMEnergy energy(std::move(lm));
  Rng pick(7);
  for (int it = 0; it < 10; ++it) {
    TagSeq tags;
    size_t n = 1 + pick.below(5);
    for (size_t t = 0; t < n; ++t) tags.push_back(static_cast<int>(pick.below(4)));
    EXPECT_NEAR(energy.energy_value(to_relaxed(tags, 4)), energy.sequence_nll(tags), 1e-9);
  }
}

TEST(TlmEnergy, HandBuiltTableLm) {
  // Force deterministic next-tag distributions with a saturated output layer
  // driven only by bias, making the LM a fixed lookup table.
  Rng rng(53);
  size_t l = 2;
  TagLMCell lm("lm", l, 3, 1, rng);
  for (auto& p : lm.params()) std::fill(p->data.begin(), p->data.end(), 0.0);
  // Bias-only softmax over {A, B, EOS}: p = softmax([1, 0, -1]).
  std::vector<double> bias = {1.0, 0.0, -1.0};
  lm.params().back();  // out_b is the last param by construction
  auto params = lm.params();
  params.back()->data = bias;

  TLMEnergy energy(std::move(lm));
  // With all recurrent weights zero the distribution is the same at every
  // step: p = softmax(bias).
  double z = std::exp(1.0) + 1.0 + std::exp(-1.0);
  double pa = std::exp(1.0) / z, pb = 1.0 / z, pe = std::exp(-1.0) / z;
  double expected = -(std::log(pa) + std::log(pb) + std::log(pe));
  EXPECT_NEAR(energy.energy_value(to_relaxed(TagSeq{0, 1}, l)), expected, 1e-12);
}

TEST(TlmEnergy, GradientMatchesFiniteDifferences) {
  Rng rng(54);
  TagLMCell lm("lm", 3, 4, 1, rng);
  TLMEnergy energy(std::move(lm));
  Rng simplex(9);
  std::vector<ad::TensorPtr> ys;
  for (int t = 0; t < 3; ++t) {
    auto y = ad::make_param(msg_cat("y", t), {3});
    y->data = testutil::random_simplex(3, simplex);
    ys.push_back(y);
  }
  auto build = [&](Tape& tape) {
    std::vector<Tape::Id> nodes;
    for (auto& y : ys) nodes.push_back(tape.leaf(y));
    return energy.energy(tape, nodes);
  };
  EXPECT_LT(ad::finite_diff_check(build, ys, 1e-5), 1e-4);
}

TEST(JointEnergy, ZeroWeightEqualsChain) {
  auto fix = testutil::tiny_chain(3, 3, 61);
  Rng rng(62);
  TagLMCell lm("lm", 3, 4, 1, rng);
  TLMEnergy tlm(std::move(lm));
  JointEnergy joint(&fix.energy, &tlm, 0.0);

  Rng simplex(8);
  std::vector<std::vector<double>> rows;
  for (int t = 0; t < 3; ++t) rows.push_back(testutil::random_simplex(3, simplex));

  Tape t1, t2;
  std::vector<Tape::Id> y1, y2;
  for (const auto& r : rows) {
    y1.push_back(t1.constant({3}, r));
    y2.push_back(t2.constant({3}, r));
  }
  EXPECT_DOUBLE_EQ(t1.scalar(joint.energy(t1, fix.tokens, y1)),
                   t2.scalar(fix.energy.energy(t2, fix.tokens, y2)));
}

TEST(JointEnergy, WeightedSumIsExact) {
  auto fix = testutil::tiny_chain(3, 3, 63);
  Rng rng(64);
  TagLMCell lm("lm", 3, 4, 1, rng);
  TLMEnergy tlm(std::move(lm));
  JointEnergy joint(&fix.energy, &tlm, 0.5);

  Rng simplex(10);
  std::vector<std::vector<double>> rows;
  for (int t = 0; t < 3; ++t) rows.push_back(testutil::random_simplex(3, simplex));
  RelaxedOutput y = RelaxedOutput::seq(rows);

  double chain = fix.energy.relaxed_energy_value(fix.tokens, y);
  double lm_term = tlm.energy_value(y);
  Tape tape;
  std::vector<Tape::Id> ys;
  for (const auto& r : rows) ys.push_back(tape.constant({3}, r));
  EXPECT_NEAR(tape.scalar(joint.energy(tape, fix.tokens, ys)), chain + 0.5 * lm_term, 1e-12);
}

TEST(JointEnergy, GradientMatchesComponentSum) {
  auto fix = testutil::tiny_chain(3, 3, 65);
  Rng rng(66);
  TagLMCell lm("lm", 3, 4, 1, rng);
  TLMEnergy tlm(std::move(lm));
  JointEnergy joint(&fix.energy, &tlm, 0.3);

  Rng simplex(11);
  std::vector<ad::TensorPtr> ys;
  for (int t = 0; t < 3; ++t) {
    auto y = ad::make_param(msg_cat("y", t), {3});
    y->data = testutil::random_simplex(3, simplex);
    ys.push_back(y);
  }
  auto build = [&](Tape& tape) {
    std::vector<Tape::Id> nodes;
    for (auto& y : ys) nodes.push_back(tape.leaf(y));
    return joint.energy(tape, fix.tokens, nodes, /*validate=*/false);
  };
  EXPECT_LT(ad::finite_diff_check(build, ys, 1e-5), 1e-4);
}

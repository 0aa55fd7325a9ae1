#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hfnc/neural.hpp"

using namespace hfnc;

namespace {

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Eigen::MatrixXd random_inputs(std::size_t T, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, 1);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
  return x;
}

double loss_at(const LSTMStack& s, const Eigen::MatrixXd& x, const std::vector<double>& y, double l2,
               const DropoutMasks* m) {
  return bce_masked(forward(s, x, m).probs, y) + l2 * l2_penalty(s);
}

void check_gradient(bool with_dropout) {
  LSTMStack s = init_params(5, 3, {4, 4, 4}, 1.0);
  // push weights away from the tiny-init regime so every path carries signal
  s.params() *= 2.5;
  const auto x = random_inputs(7, 3, 9);
  const std::vector<double> y{kNaN, 0, 1, kNaN, 1, 0, kNaN};
  const double l2 = 1e-3;
  std::optional<DropoutMasks> masks;
  if (with_dropout) masks = make_dropout_masks(3, 1, 2, s, 0.3, 0.3);
  const DropoutMasks* m = masks ? &*masks : nullptr;

  const auto lg = loss_and_gradient(s, x, y, l2, m);
  EXPECT_NEAR(lg.loss, loss_at(s, x, y, l2, m), 1e-12);
  const double h = 1e-6;
  double worst = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    LSTMStack a = s, b = s;
    a.params()(static_cast<Eigen::Index>(i)) += h;
    b.params()(static_cast<Eigen::Index>(i)) -= h;
    const double fd = (loss_at(a, x, y, l2, m) - loss_at(b, x, y, l2, m)) / (2 * h);
    const double an = lg.grad(static_cast<Eigen::Index>(i));
    const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
    worst = std::max(worst, rel);
  }
  EXPECT_LE(worst, 1e-4);
}

}  // namespace

TEST(LSTMStack, LayoutAndWeightMask) {
  LSTMStack s(3, {4, 2});
  EXPECT_EQ(s.size(), (16u * 3 + 16 * 4 + 16) + (8u * 4 + 8 * 2 + 8) + 2 + 1);
  const auto mask = s.weight_mask();
  EXPECT_DOUBLE_EQ(mask.sum(), static_cast<double>(s.size() - 16 - 8 - 1));
}

TEST(InitParams, RangesAndForgetBias) {
  auto s = init_params(7, 5, {8, 6}, 1.0);
  for (std::size_t li = 0; li < s.num_layers(); ++li) {
    const auto& l = s.layer(li);
    const double a = 1.0 / std::sqrt(static_cast<double>(l.hidden));
    for (std::size_t i = l.w_off; i < l.b_off; ++i) EXPECT_LE(std::abs(s.params()(static_cast<Eigen::Index>(i))), a);
    for (std::size_t k = 0; k < 4 * l.hidden; ++k) {
      const double b = s.params()(static_cast<Eigen::Index>(l.b_off + k));
      EXPECT_EQ(b, (k >= l.hidden && k < 2 * l.hidden) ? 1.0 : 0.0);
    }
  }
  EXPECT_EQ(init_params(7, 5, {8, 6}).params(), s.params());
  EXPECT_NE(init_params(8, 5, {8, 6}).params(), s.params());
}

TEST(Forward, SingleCellMatchesHandComputation) {
  LSTMStack s(1, {1});
  auto& p = s.params();
  // W (i,f,g,o), U, b, w_out, b_out
  p << 0.5, -0.3, 0.8, 0.2,   //
      0.1, 0.4, -0.6, 0.3,    //
      0.05, 1.0, -0.1, 0.0,   //
      1.5, -0.2;
  const std::vector<double> xs{1.0, -2.0};
  Eigen::MatrixXd x(2, 1);
  x << xs[0], xs[1];
  auto out = forward(s, x);

  double h = 0, c = 0;
  for (std::size_t t = 0; t < 2; ++t) {
    const double i = sig(0.5 * xs[t] + 0.1 * h + 0.05);
    const double f = sig(-0.3 * xs[t] + 0.4 * h + 1.0);
    const double g = std::tanh(0.8 * xs[t] - 0.6 * h - 0.1);
    const double o = sig(0.2 * xs[t] + 0.3 * h);
    c = f * c + i * g;
    h = o * std::tanh(c);
    EXPECT_NEAR(out.probs[t], sig(1.5 * h - 0.2), 1e-14);
  }
}

TEST(Forward, OutputAtTIgnoresLaterInputs) {
  auto s = init_params(3, 4, {5, 3});
  auto x = random_inputs(10, 4, 1);
  auto base = forward(s, x).probs;
  x.row(7).setConstant(9.0);
  auto changed = forward(s, x).probs;
  for (int t = 0; t < 7; ++t) EXPECT_EQ(base[t], changed[t]);
  EXPECT_NE(base[8], changed[8]);
}

TEST(Forward, RejectsWrongWidthAndNonFinite) {
  auto s = init_params(3, 4, {5});
  EXPECT_THROW(forward(s, Eigen::MatrixXd::Zero(3, 5)), ValidationError);
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(3, 4);
  x(1, 1) = std::nan("");
  EXPECT_THROW(forward(s, x), ValidationError);
}

TEST(Backward, MatchesFiniteDifferences) { check_gradient(false); }

TEST(Backward, MatchesFiniteDifferencesUnderDropout) { check_gradient(true); }

TEST(Backward, UnlabeledSequenceHasOnlyL2Gradient) {
  auto s = init_params(1, 2, {3});
  auto cache = forward(s, random_inputs(4, 2, 2));
  VectorXd g = VectorXd::Zero(s.params().size());
  backward(s, cache, std::vector<double>(4, kNaN), 1.0, g);
  EXPECT_EQ(g.norm(), 0.0);
}

TEST(BceMasked, ClampAndMask) {
  const std::vector<double> p{0.0, 0.5, 1.0};
  const std::vector<double> y{1.0, kNaN, 1.0};
  EXPECT_NEAR(bce_masked(p, y), -(std::log(1e-7) + std::log(1 - 1e-7)) / 2.0, 1e-12);
  EXPECT_THROW(bce_masked(p, std::vector<double>(3, kNaN)), ValidationError);
}

TEST(Dropout, EmpiricalRateAndScale) {
  Rng rng(4);
  const auto m = bernoulli_mask(rng, 200000, 0.35);
  const double zeros = static_cast<double>((m.array() == 0.0).count()) / static_cast<double>(m.size());
  EXPECT_NEAR(zeros, 0.35, 0.005);
  EXPECT_NEAR(m.mean(), 1.0, 0.01);
}

TEST(Dropout, MasksDeterministicPerSequence) {
  auto s = init_params(1, 6, {10, 10});
  auto a = make_dropout_masks(1, 2, 3, s, 0.35, 0.2);
  auto b = make_dropout_masks(1, 2, 3, s, 0.35, 0.2);
  auto c = make_dropout_masks(1, 2, 4, s, 0.35, 0.2);
  EXPECT_EQ(a.input[0], b.input[0]);
  EXPECT_EQ(a.recurrent[1], b.recurrent[1]);
  EXPECT_NE(a.input[0], c.input[0]);
  EXPECT_THROW(make_dropout_masks(1, 1, 1, s, 1.0, 0.0), ValidationError);
}

TEST(Dropout, ZeroRateIsEvaluationMode) {
  auto s = init_params(2, 3, {4});
  auto x = random_inputs(5, 3, 3);
  auto m = make_dropout_masks(1, 1, 1, s, 0.0, 0.0);
  EXPECT_EQ(forward(s, x, &m).probs, forward(s, x).probs);
}

TEST(RmsProp, OneStepArithmetic) {
  VectorXd theta(2), g(2);
  theta << 1.0, -1.0;
  g << 2.0, -1.0;
  RmsPropState st;
  rmsprop_step(theta, g, st, 0.01);
  EXPECT_NEAR(st.mean_square(0), 0.4, 1e-15);
  EXPECT_NEAR(st.mean_square(1), 0.1, 1e-15);
  EXPECT_NEAR(theta(0), 1.0 - 0.01 * 2.0 / (std::sqrt(0.4) + 1e-7), 1e-15);
  EXPECT_NEAR(theta(1), -1.0 + 0.01 * 1.0 / (std::sqrt(0.1) + 1e-7), 1e-15);
  rmsprop_step(theta, g, st, 0.01);
  EXPECT_NEAR(st.mean_square(0), 0.9 * 0.4 + 0.1 * 4.0, 1e-15);
}

TEST(RmsProp, FrozenEntriesUntouched) {
  VectorXd theta = VectorXd::Ones(3), g = VectorXd::Constant(3, 0.5), frozen(3);
  frozen << 1, 0, 1;
  RmsPropState st;
  rmsprop_step(theta, g, st, 0.1, &frozen);
  EXPECT_EQ(theta(0), 1.0);
  EXPECT_LT(theta(1), 1.0);
  EXPECT_EQ(theta(2), 1.0);
}

TEST(PlateauSchedule, ReducesAfterPatienceAndStopsAfterMaxReductions) {
  PlateauSchedule s(9.6e-4, 10, 0.9, 8);
  EXPECT_TRUE(s.update(0.5).improved);
  for (int i = 0; i < 9; ++i) EXPECT_FALSE(s.update(0.5).reduced);
  auto d = s.update(0.4);
  EXPECT_TRUE(d.reduced);
  EXPECT_NEAR(s.lr(), 8.64e-4, 1e-18);
  int epochs = 11;
  while (!s.update(0.5).stop) ++epochs;
  ++epochs;
  EXPECT_EQ(epochs, 1 + 90);
  EXPECT_EQ(s.state().reductions_used, 8u);
  EXPECT_NEAR(s.lr(), 9.6e-4 * std::pow(0.9, 8), 1e-18);
}

TEST(PlateauSchedule, ImprovementResetsPatience) {
  PlateauSchedule s(1e-3, 3, 0.5, 2);
  s.update(0.1);
  s.update(0.1);
  s.update(0.1);
  EXPECT_TRUE(s.update(0.2).improved);
  EXPECT_FALSE(s.update(0.2).reduced);
  EXPECT_FALSE(s.update(0.2).reduced);
  EXPECT_TRUE(s.update(0.2).reduced);
  EXPECT_THROW(s.update(std::nan("")), ValidationError);
  EXPECT_THROW(PlateauSchedule(1e-3, 3, 1.5, 2), ValidationError);
}

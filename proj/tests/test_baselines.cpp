#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <random>

#include "hfnc/baselines.hpp"

using namespace hfnc;

namespace {

struct Data {
  RowMatrix x;
  std::vector<double> y;
};

Data make_data(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0, 1);
  Data out;
  out.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  VectorXd beta(static_cast<Eigen::Index>(d));
  for (Eigen::Index j = 0; j < beta.size(); ++j) beta(j) = j < 3 ? 1.5 - 0.7 * static_cast<double>(j) : 0.0;
  for (Eigen::Index i = 0; i < out.x.size(); ++i) out.x.data()[i] = g(rng);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-(out.x.row(static_cast<Eigen::Index>(i)).dot(beta) - 0.4)));
    out.y.push_back(std::uniform_real_distribution<double>(0, 1)(rng) < p ? 1.0 : 0.0);
  }
  return out;
}

// Newton's method on mean BCE + (lambda/2)||w||^2, intercept unpenalized.
VectorXd ridge_newton(const Data& d, double lambda) {
  const auto n = d.x.rows();
  const auto p = d.x.cols();
  Eigen::MatrixXd a(n, p + 1);
  a.leftCols(p) = d.x;
  a.col(p).setOnes();
  VectorXd theta = VectorXd::Zero(p + 1);
  for (int it = 0; it < 50; ++it) {
    VectorXd mu = (a * theta).unaryExpr([](double z) { return 1.0 / (1.0 + std::exp(-z)); });
    VectorXd y = Eigen::Map<const VectorXd>(d.y.data(), n);
    VectorXd g = a.transpose() * (mu - y) / static_cast<double>(n);
    Eigen::MatrixXd h = a.transpose() * (mu.array() * (1 - mu.array())).matrix().asDiagonal() * a / static_cast<double>(n);
    g.head(p) += lambda * theta.head(p);
    h.topLeftCorner(p, p).diagonal().array() += lambda;
    theta -= h.ldlt().solve(g);
  }
  return theta;
}

}  // namespace

TEST(ElasticNet, RidgeLimitMatchesNewtonOracle) {
  const auto d = make_data(400, 5, 1);
  const auto m = fit_elasticnet_logreg(d.x, d.y, {0.05, 0.0, 1e-10, 200000});
  ASSERT_TRUE(m.converged);
  const VectorXd ref = ridge_newton(d, 0.05);
  for (Eigen::Index j = 0; j < 5; ++j) EXPECT_NEAR(m.weights(j), ref(j), 1e-6);
  EXPECT_NEAR(m.intercept, ref(5), 1e-6);
}

TEST(ElasticNet, KktConditionsHold) {
  const auto d = make_data(500, 8, 2);
  const ElasticNetParams params{0.02, 0.6, 1e-9, 200000};
  const auto m = fit_elasticnet_logreg(d.x, d.y, params);
  ASSERT_TRUE(m.converged);
  VectorXd gw;
  double gb = 0;
  logreg_smooth_gradient(d.x, d.y, m, gw, gb);
  const double l1 = params.lambda * params.alpha;
  EXPECT_NEAR(gb, 0.0, 1e-7);
  for (Eigen::Index j = 0; j < gw.size(); ++j) {
    if (m.weights(j) != 0.0) {
      EXPECT_NEAR(gw(j) + l1 * (m.weights(j) > 0 ? 1.0 : -1.0), 0.0, 1e-7) << j;
    } else {
      EXPECT_LE(std::abs(gw(j)), l1 + 1e-7) << j;
    }
  }
  int zeros = 0;
  for (Eigen::Index j = 0; j < m.weights.size(); ++j) zeros += m.weights(j) == 0.0;
  EXPECT_GT(zeros, 0);
}

TEST(ElasticNet, LambdaMaxGivesAllZeroWeights) {
  const auto d = make_data(300, 6, 3);
  double ybar = 0;
  for (double v : d.y) ybar += v;
  ybar /= static_cast<double>(d.y.size());
  VectorXd y = Eigen::Map<const VectorXd>(d.y.data(), static_cast<Eigen::Index>(d.y.size()));
  const double alpha = 0.5;
  const double lambda_max =
      (d.x.transpose() * (VectorXd::Constant(y.size(), ybar) - y)).cwiseAbs().maxCoeff() / 300.0 / alpha;
  auto above = fit_elasticnet_logreg(d.x, d.y, {lambda_max * 1.01, alpha});
  EXPECT_EQ(above.weights.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_NEAR(sigmoid(above.intercept), ybar, 1e-6);
  auto below = fit_elasticnet_logreg(d.x, d.y, {lambda_max * 0.9, alpha});
  EXPECT_GT(below.weights.cwiseAbs().maxCoeff(), 0.0);
}

TEST(ElasticNet, ObjectiveTraceMonotone) {
  const auto d = make_data(200, 4, 4);
  FitTrace trace;
  fit_elasticnet_logreg(d.x, d.y, {1e-3, 0.2}, &trace);
  ASSERT_GT(trace.objective.size(), 2u);
  for (std::size_t i = 1; i < trace.objective.size(); ++i) EXPECT_LE(trace.objective[i], trace.objective[i - 1]);
}

TEST(ElasticNet, RowOrderDoesNotMatter) {
  const auto d = make_data(150, 3, 5);
  Data r;
  r.x = d.x.colwise().reverse();
  r.y.assign(d.y.rbegin(), d.y.rend());
  const ElasticNetParams params{1e-2, 0.3, 1e-10, 200000};
  auto a = fit_elasticnet_logreg(d.x, d.y, params);
  auto b = fit_elasticnet_logreg(r.x, r.y, params);
  EXPECT_LT((a.weights - b.weights).norm(), 1e-7);
}

TEST(ElasticNet, SingleClassFitsInterceptOnly) {
  RowMatrix x = RowMatrix::Ones(4, 2);
  auto m = fit_elasticnet_logreg(x, std::vector<double>(4, 0.0), kLr517Params);
  EXPECT_EQ(m.weights.norm(), 0.0);
  EXPECT_NEAR(sigmoid(m.intercept), 1e-7, 1e-12);
  EXPECT_FALSE(m.warnings.empty());
}

TEST(ElasticNet, RejectsBadInput) {
  RowMatrix x = RowMatrix::Ones(2, 2);
  EXPECT_THROW(fit_elasticnet_logreg(x, std::vector<double>{0, kNaN}, kLr14Params), ValidationError);
  EXPECT_THROW(fit_elasticnet_logreg(x, std::vector<double>{0}, kLr14Params), ValidationError);
  EXPECT_THROW(fit_elasticnet_logreg(x, std::vector<double>{0, 1}, {1.0, 1.5}), ValidationError);
}

TEST(ElasticNet, PredictPicksColumns) {
  ElasticNetModel m;
  m.columns = {2, 0};
  m.weights = VectorXd(2);
  m.weights << 1.0, -2.0;
  m.intercept = 0.5;
  RowMatrix full(1, 3);
  full << 3.0, 9.0, 0.25;
  EXPECT_DOUBLE_EQ(predict_logreg_rows(m, full)[0], sigmoid(0.5 + 0.25 - 6.0));
  EXPECT_THROW(predict_logreg(m, std::vector<double>{1.0}), ValidationError);
}

TEST(SelectColumns, MissingFeatureNamed) {
  NormStats s;
  s.features = {{"hr", VariableKind::Physiologic, 0, 1, 0}};
  EXPECT_EQ(select_columns(s, {"hr"}), std::vector<std::size_t>{0});
  try {
    select_columns(s, {"lactate"});
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("lactate"), std::string::npos);
  }
}

TEST(ElasticNet, ReferenceSettings) {
  EXPECT_EQ(kLr14Params.lambda, 0.75);
  EXPECT_EQ(kLr14Params.alpha, 0.5);
  EXPECT_EQ(kLr517Params.lambda, 1.15e-3);
  EXPECT_EQ(kLr517Params.alpha, 0.2);
  EXPECT_EQ(default_lr14_features().size(), 14u);
}

#pragma once

// Elastic-net logistic regression fitted by monotone FISTA with
// backtracking. Each charted time step is one row.

#include <Eigen/Core>

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "hfnc/common.hpp"
#include "hfnc/neural.hpp"
#include "hfnc/preprocess.hpp"

namespace hfnc {

/// Default risk-factor subset for the 14-variable model.
inline const std::vector<std::string>& default_lr14_features() {
  static const std::vector<std::string> kFeatures{
      "resp_rate", "heart_rate", "spo2", "fio2", "sf_ratio", "pco2",    "ph",
      "hfnc_flow", "age",        "temperature", "sbp",  "dbp",  "wbc", "lactate"};
  return kFeatures;
}

struct ElasticNetParams {
  double lambda = 0;
  double alpha = 0.5;  // L1 share
  double tolerance = 1e-6;
  std::size_t max_iterations = 100000;
};

/// Reference regularization settings.
inline constexpr ElasticNetParams kLr14Params{7.50e-1, 0.5};
inline constexpr ElasticNetParams kLr517Params{1.15e-3, 0.2};

struct ElasticNetModel {
  std::string subset;  // "lr14" | "full"
  std::vector<std::string> features;
  std::vector<std::size_t> columns;  // into the NormStats layout
  VectorXd weights;
  double intercept = 0;
  double lambda = 0;
  double alpha = 0;
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<std::string> warnings;
};

/// Resolves feature names to design-matrix columns; missing names are fatal.
inline std::vector<std::size_t> select_columns(const NormStats& stats, const std::vector<std::string>& names) {
  std::vector<std::size_t> cols;
  for (const auto& n : names) {
    auto c = stats.column(n);
    if (!c) fail("feature '", n, "' is not present in the normalization statistics");
    cols.push_back(*c);
  }
  return cols;
}

namespace detail {

struct LogregProblem {
  const RowMatrix& x;
  const VectorXd& y;
  double lambda;
  double alpha;

  double n() const { return static_cast<double>(x.rows()); }

  /// Mean BCE + lambda (1-alpha)/2 ||w||^2
  double smooth(const VectorXd& w, double b) const {
    VectorXd z = x * w;
    double s = 0;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      const double zi = z(i) + b;
      // log(1 + e^z) - y z, stable for either sign
      s += (zi > 0 ? zi + std::log1p(std::exp(-zi)) : std::log1p(std::exp(zi))) - y(i) * zi;
    }
    return s / n() + 0.5 * lambda * (1.0 - alpha) * w.squaredNorm();
  }

  double nonsmooth(const VectorXd& w) const { return lambda * alpha * w.lpNorm<1>(); }

  double objective(const VectorXd& w, double b) const { return smooth(w, b) + nonsmooth(w); }

  void gradient(const VectorXd& w, double b, VectorXd& gw, double& gb) const {
    VectorXd r = x * w;
    for (Eigen::Index i = 0; i < r.size(); ++i) r(i) = sigmoid(r(i) + b) - y(i);
    gw.noalias() = x.transpose() * r / n();
    gw += lambda * (1.0 - alpha) * w;
    gb = r.sum() / n();
  }

  void prox(VectorXd& w, double step) const {
    const double thr = step * lambda * alpha;
    for (Eigen::Index j = 0; j < w.size(); ++j) {
      const double v = w(j);
      w(j) = v > thr ? v - thr : v < -thr ? v + thr : 0.0;
    }
  }
};

}  // namespace detail

struct FitTrace {
  std::vector<double> objective;  // per accepted iterate
};

/// Minimizes mean BCE + lambda (alpha ||w||_1 + (1-alpha)/2 ||w||_2^2) with
/// an unpenalized intercept. Stops when the proximal gradient mapping has
/// norm <= tolerance or after max_iterations.
inline ElasticNetModel fit_elasticnet_logreg(const RowMatrix& rows, std::span<const double> labels,
                                             const ElasticNetParams& params, FitTrace* trace = nullptr) {
  if (static_cast<std::size_t>(rows.rows()) != labels.size()) fail("fit_elasticnet_logreg: row/label mismatch");
  if (rows.rows() == 0) fail("fit_elasticnet_logreg: no rows");
  if (!(params.lambda >= 0) || !(params.alpha >= 0 && params.alpha <= 1)) {
    fail("fit_elasticnet_logreg: need lambda >= 0 and alpha in [0,1]");
  }
  ElasticNetModel model;
  model.lambda = params.lambda;
  model.alpha = params.alpha;
  const auto d = rows.cols();
  model.weights = VectorXd::Zero(d);

  VectorXd y(rows.rows());
  double positives = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double v = labels[static_cast<std::size_t>(i)];
    if (!(v == 0.0 || v == 1.0)) fail("fit_elasticnet_logreg: labels must be 0/1 (NaN rows excluded upstream)");
    y(i) = v;
    positives += v;
  }
  const double base = positives / static_cast<double>(y.size());
  if (positives == 0 || positives == static_cast<double>(y.size())) {
    const double p = std::clamp(base, kProbClamp, 1.0 - kProbClamp);
    model.intercept = std::log(p / (1.0 - p));
    model.converged = true;
    model.warnings.push_back("single-class labels: fitted intercept only");
    return model;
  }

  detail::LogregProblem prob{rows, y, params.lambda, params.alpha};
  VectorXd x_w = VectorXd::Zero(d);
  double x_b = std::log(base / (1.0 - base));
  VectorXd yk_w = x_w;
  double yk_b = x_b;
  double t = 1.0;
  double L = 1.0;
  double f_x = prob.objective(x_w, x_b);
  if (trace) trace->objective.push_back(f_x);

  VectorXd gw(d), p_w(d), prev_w(d);
  double gb = 0;
  for (std::size_t it = 1; it <= params.max_iterations; ++it) {
    prob.gradient(yk_w, yk_b, gw, gb);
    const double f_y = prob.smooth(yk_w, yk_b);
    double p_b = 0;
    for (;;) {
      p_w = yk_w - gw / L;
      prob.prox(p_w, 1.0 / L);
      p_b = yk_b - gb / L;
      const VectorXd dw = p_w - yk_w;
      const double db = p_b - yk_b;
      const double quad = f_y + gw.dot(dw) + gb * db + 0.5 * L * (dw.squaredNorm() + db * db);
      if (prob.smooth(p_w, p_b) <= quad + 1e-15 * std::abs(quad)) break;
      L *= 2.0;
    }
    const double mapping = L * std::sqrt((p_w - yk_w).squaredNorm() + (p_b - yk_b) * (p_b - yk_b));

    // Monotone step: keep the better of the prox point and the current iterate.
    const double f_p = prob.objective(p_w, p_b);
    prev_w = x_w;
    const double prev_b = x_b;
    if (f_p <= f_x) {
      x_w = p_w;
      x_b = p_b;
      f_x = f_p;
    }
    if (trace) trace->objective.push_back(f_x);
    model.iterations = it;
    if (mapping <= params.tolerance) {
      model.converged = true;
      break;
    }
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    yk_w = x_w + (t / t_next) * (p_w - x_w) + ((t - 1.0) / t_next) * (x_w - prev_w);
    yk_b = x_b + (t / t_next) * (p_b - x_b) + ((t - 1.0) / t_next) * (x_b - prev_b);
    t = t_next;
    // Let the step grow again after a conservative backtrack.
    L = std::max(L * 0.9, 1e-12);
  }
  if (!model.converged) model.warnings.push_back("did not reach tolerance within the iteration cap");
  model.weights = x_w;
  model.intercept = x_b;
  return model;
}

/// Gradient of the smooth part at the fitted point; used for KKT checks.
inline void logreg_smooth_gradient(const RowMatrix& rows, std::span<const double> labels, const ElasticNetModel& m,
                                   VectorXd& gw, double& gb) {
  VectorXd y(rows.rows());
  for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = labels[static_cast<std::size_t>(i)];
  detail::LogregProblem prob{rows, y, m.lambda, m.alpha};
  gw.resize(rows.cols());
  prob.gradient(m.weights, m.intercept, gw, gb);
}

inline double logreg_objective(const RowMatrix& rows, std::span<const double> labels, const ElasticNetModel& m) {
  VectorXd y(rows.rows());
  for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = labels[static_cast<std::size_t>(i)];
  detail::LogregProblem prob{rows, y, m.lambda, m.alpha};
  return prob.objective(m.weights, m.intercept);
}

/// sigmoid(w . x + b) where x is the model's own feature vector.
inline double predict_logreg(const ElasticNetModel& m, std::span<const double> x) {
  if (x.size() != static_cast<std::size_t>(m.weights.size())) {
    fail("predict_logreg: expected ", m.weights.size(), " features, got ", x.size());
  }
  double z = m.intercept;
  for (std::size_t j = 0; j < x.size(); ++j) z += m.weights(static_cast<Eigen::Index>(j)) * x[j];
  return sigmoid(z);
}

/// Predicts every row of a full design matrix, picking the model's columns.
inline std::vector<double> predict_logreg_rows(const ElasticNetModel& m, const RowMatrix& full) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(full.rows()));
  std::vector<double> x(m.columns.size());
  for (Eigen::Index r = 0; r < full.rows(); ++r) {
    for (std::size_t j = 0; j < m.columns.size(); ++j) {
      const auto c = static_cast<Eigen::Index>(m.columns[j]);
      if (c >= full.cols()) fail("predict_logreg: design matrix lacks column ", c);
      x[j] = full(r, c);
    }
    out.push_back(predict_logreg(m, x));
  }
  return out;
}

}  // namespace hfnc

#pragma once

// Time-anchored evaluation: eligibility at an anchor, anchor scores,
// Mann-Whitney AUROC, ROC curves, operating points and time-to-failure.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "hfnc/common.hpp"
#include "hfnc/trial_engine.hpp"

namespace hfnc {

struct PredictionSeries {
  std::string trial_id;
  std::vector<Minutes> times;
  std::vector<double> probs;
};

/// What evaluation needs to know about a trial.
struct EvalTrial {
  std::string trial_id;
  Minutes period_start = 0;
  Minutes resolution_time = 0;
  bool failed = false;
  bool respiratory = false;

  Minutes resolved_after() const { return resolution_time - period_start; }
};

inline EvalTrial eval_trial(const HFNCTrial& t) {
  return {t.trial_id, t.target_period.start, t.target_period.resolution_time,
          t.target_period.outcome == Outcome::Failure, t.respiratory};
}

inline EvalTrial eval_trial(const TrialManifestEntry& e) {
  return {e.trial_id, e.period_start, e.resolution_time, e.outcome == Outcome::Failure, e.respiratory};
}

// ---------------------------------------------------------------------------
// eligible_trials_at / score_at

/// Trials still unresolved at `anchor` minutes into their period:
/// resolution - start > anchor - epsilon.
inline std::vector<const EvalTrial*> eligible_trials_at(std::span<const EvalTrial> trials, Minutes anchor,
                                                        Minutes epsilon = 0.0) {
  std::vector<const EvalTrial*> out;
  for (const auto& t : trials) {
    if (t.resolved_after() > anchor - epsilon) out.push_back(&t);
  }
  return out;
}

enum class StalenessRule { LastAtOrBefore, NearestWithin15 };

/// Prediction representing `anchor` minutes into the period. Default: the
/// latest prediction at or before period_start + anchor.
inline std::optional<double> score_at(const PredictionSeries& series, Minutes anchor, Minutes period_start,
                                      StalenessRule rule = StalenessRule::LastAtOrBefore) {
  const Minutes at = period_start + anchor;
  if (rule == StalenessRule::LastAtOrBefore) {
    auto it = std::upper_bound(series.times.begin(), series.times.end(), at);
    if (it == series.times.begin()) return std::nullopt;
    return series.probs[static_cast<std::size_t>(std::distance(series.times.begin(), it)) - 1];
  }
  std::optional<double> best;
  Minutes best_gap = 15.0;
  for (std::size_t i = 0; i < series.times.size(); ++i) {
    const Minutes gap = std::abs(series.times[i] - at);
    if (gap <= best_gap) {
      // ties prefer the earlier prediction
      if (!best || gap < best_gap) {
        best = series.probs[i];
        best_gap = gap;
      }
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// AUROC / ROC / operating points

/// Mann-Whitney: P(score+ > score-) + P(tie)/2, via midranks. Absent when
/// either class is missing.
inline std::optional<double> auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) fail("auroc: length mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0;
  double n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] != 0) {
        rank_sum_pos += midrank;
        n_pos += 1;
      }
    }
    i = j;
  }
  const double n_neg = static_cast<double>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  return (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg);
}

struct RocPoint {
  double threshold = 0;  // predicted positive iff score >= threshold
  double fpr = 0;
  double tpr = 0;
};

/// One point per distinct threshold, from (0,0) at +inf down to (1,1).
inline std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) fail("roc_curve: length mismatch");
  double P = 0;
  for (int y : labels) P += y != 0;
  const double N = static_cast<double>(labels.size()) - P;
  if (P == 0 || N == 0) fail("roc_curve: both classes are required");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<RocPoint> pts{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    const double thr = scores[order[i]];
    while (j < order.size() && scores[order[j]] == thr) {
      (labels[order[j]] != 0 ? tp : fp) += 1;
      ++j;
    }
    pts.push_back({thr, fp / N, tp / P});
    i = j;
  }
  return pts;
}

inline double trapezoid_area(const std::vector<RocPoint>& pts) {
  double a = 0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    a += (pts[i].fpr - pts[i - 1].fpr) * (pts[i].tpr + pts[i - 1].tpr) / 2.0;
  }
  return a;
}

inline const std::vector<double>& default_sensitivity_targets() {
  static const std::vector<double> kTargets{0.10, 0.20, 0.30, 0.40, 0.50, 0.60, 0.70, 0.80, 0.90, 0.95, 1.00};
  return kTargets;
}

struct OperatingPoint {
  double target = 0;
  double threshold = 0;
  double sensitivity = 0;
  double specificity = 0;
  std::optional<double> ppv;
  std::optional<double> npv;
};

/// For each target: the highest threshold whose sensitivity reaches it.
inline std::vector<OperatingPoint> operating_points(std::span<const double> scores, std::span<const int> labels,
                                                    const std::vector<double>& targets = default_sensitivity_targets()) {
  auto roc = roc_curve(scores, labels);
  double P = 0;
  for (int y : labels) P += y != 0;
  const double N = static_cast<double>(labels.size()) - P;
  std::vector<OperatingPoint> out;
  for (double target : targets) {
    for (const auto& pt : roc) {
      if (pt.tpr < target - 1e-12) continue;
      const double tp = pt.tpr * P, fp = pt.fpr * N;
      const double fn = P - tp, tn = N - fp;
      OperatingPoint op;
      op.target = target;
      op.threshold = pt.threshold;
      op.sensitivity = pt.tpr;
      op.specificity = tn / N;
      if (tp + fp > 0) op.ppv = tp / (tp + fp);
      if (tn + fn > 0) op.npv = tn / (tn + fn);
      out.push_back(op);
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Anchored sweeps

struct AnchoredScores {
  std::vector<double> scores;
  std::vector<int> labels;
  std::size_t n_eligible = 0;
  std::size_t n_fail = 0;
  std::size_t n_dropped = 0;
};

using PredictionIndex = std::map<std::string, const PredictionSeries*>;

inline PredictionIndex index_predictions(const std::vector<PredictionSeries>& preds) {
  PredictionIndex idx;
  for (const auto& p : preds) idx.emplace(p.trial_id, &p);
  return idx;
}

inline AnchoredScores scores_at_anchor(std::span<const EvalTrial> trials, const PredictionIndex& preds, Minutes anchor,
                                       StalenessRule rule = StalenessRule::LastAtOrBefore, Minutes epsilon = 0.0) {
  AnchoredScores out;
  for (const EvalTrial* t : eligible_trials_at(trials, anchor, epsilon)) {
    ++out.n_eligible;
    out.n_fail += t->failed ? 1 : 0;
    auto it = preds.find(t->trial_id);
    std::optional<double> s;
    if (it != preds.end()) s = score_at(*it->second, anchor, t->period_start, rule);
    if (!s) {
      ++out.n_dropped;
      continue;
    }
    out.scores.push_back(*s);
    out.labels.push_back(t->failed ? 1 : 0);
  }
  return out;
}

struct SweepRow {
  Minutes t = 0;
  std::size_t n_eligible = 0;
  std::size_t n_fail = 0;
  std::size_t n_dropped = 0;
  std::optional<double> auroc;
};

enum class CohortFilter { All, Respiratory };

inline std::vector<EvalTrial> filter_cohort(std::span<const EvalTrial> trials, CohortFilter f) {
  std::vector<EvalTrial> out;
  for (const auto& t : trials) {
    if (f == CohortFilter::All || t.respiratory) out.push_back(t);
  }
  return out;
}

/// AUROC at anchors 0, step, 2 step, ... up to span_end (inclusive).
inline std::vector<SweepRow> horizon_sweep(std::span<const EvalTrial> all_trials, const PredictionIndex& preds,
                                           Minutes step = 30.0, Minutes span_end = kPeriodLength,
                                           CohortFilter filter = CohortFilter::All,
                                           StalenessRule rule = StalenessRule::LastAtOrBefore) {
  if (!(step > 0)) fail("horizon_sweep: step must be positive");
  const auto trials = filter_cohort(all_trials, filter);
  std::vector<SweepRow> rows;
  const auto n_anchor = static_cast<std::size_t>(std::floor(span_end / step + 1e-9)) + 1;
  for (std::size_t k = 0; k < n_anchor; ++k) {
    const Minutes t = static_cast<double>(k) * step;
    auto a = scores_at_anchor(trials, preds, t, rule);
    rows.push_back({t, a.n_eligible, a.n_fail, a.n_dropped, auroc(a.scores, a.labels)});
  }
  return rows;
}

/// Mean AUROC over hourly anchors 0..14 h, skipping anchors where it is
/// undefined. Absent if no anchor is defined.
inline std::optional<double> validation_objective(std::span<const EvalTrial> trials, const PredictionIndex& preds) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& row : horizon_sweep(trials, preds, kMinutesPerHour, 14.0 * kMinutesPerHour)) {
    if (row.auroc) {
      sum += *row.auroc;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Time to failure

/// Linear interpolation between order statistics (h = (n-1) p).
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) fail("quantile of empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct TtfBin {
  double lower_hours = 0;
  std::size_t count = 0;
  double cdf = 0;
};

struct TimeToFailure {
  std::vector<double> hours;  // sorted failure times relative to period start
  std::optional<double> median;
  std::optional<double> p80;
  std::vector<TtfBin> histogram;  // 1-hour bins over [0, 24)
};

inline TimeToFailure time_to_failure_stats(std::span<const EvalTrial> trials, double bin_hours = 1.0) {
  TimeToFailure out;
  for (const auto& t : trials) {
    if (t.failed) out.hours.push_back(t.resolved_after() / kMinutesPerHour);
  }
  if (out.hours.empty()) return out;
  std::sort(out.hours.begin(), out.hours.end());
  out.median = quantile_sorted(out.hours, 0.5);
  out.p80 = quantile_sorted(out.hours, 0.8);
  const auto nbins = static_cast<std::size_t>(std::ceil(24.0 / bin_hours));
  out.histogram.resize(nbins);
  for (std::size_t b = 0; b < nbins; ++b) out.histogram[b].lower_hours = static_cast<double>(b) * bin_hours;
  for (double h : out.hours) {
    auto b = static_cast<std::size_t>(std::floor(h / bin_hours));
    out.histogram[std::min(b, nbins - 1)].count++;
  }
  std::size_t cum = 0;
  for (auto& bin : out.histogram) {
    cum += bin.count;
    bin.cdf = static_cast<double>(cum) / static_cast<double>(out.hours.size());
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV writers

namespace detail {
inline std::string opt_number(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }
}  // namespace detail

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "t_min,n_eligible,n_fail,auroc\n";
  for (const auto& r : rows) {
    os << format_number(r.t) << ',' << r.n_eligible << ',' << r.n_fail << ',' << detail::opt_number(r.auroc) << '\n';
  }
}

inline void write_roc_csv(std::ostream& os, const std::vector<RocPoint>& pts) {
  os << "threshold,fpr,tpr\n";
  for (const auto& p : pts) {
    os << (std::isinf(p.threshold) ? std::string("inf") : format_number(p.threshold)) << ','
       << format_number(p.fpr) << ',' << format_number(p.tpr) << '\n';
  }
}

inline void write_operating_csv(std::ostream& os, const std::vector<OperatingPoint>& ops) {
  os << "sens,spec,ppv,npv\n";
  for (const auto& o : ops) {
    os << format_number(o.target) << ',' << format_number(o.specificity) << ',' << detail::opt_number(o.ppv) << ','
       << detail::opt_number(o.npv) << '\n';
  }
}

inline void write_ttf_csv(std::ostream& os, const TimeToFailure& ttf) {
  os << "bin,count,cdf\n";
  for (const auto& b : ttf.histogram) {
    os << format_number(b.lower_hours) << ',' << b.count << ',' << format_number(b.cdf) << '\n';
  }
}

}  // namespace hfnc

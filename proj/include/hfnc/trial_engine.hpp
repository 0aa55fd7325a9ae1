#pragma once

// HFNC periods, outcomes, trials, per-step labels, exclusions and the
// patient-level cohort split.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "hfnc/catalog.hpp"
#include "hfnc/common.hpp"

namespace hfnc {

enum class Outcome { Failure, Success, Censored };

inline const char* to_string(Outcome o) {
  switch (o) {
    case Outcome::Failure: return "Failure";
    case Outcome::Success: return "Success";
    case Outcome::Censored: return "Censored";
  }
  return "?";
}

inline Outcome parse_outcome(const std::string& s) {
  if (s == "Failure") return Outcome::Failure;
  if (s == "Success") return Outcome::Success;
  if (s == "Censored") return Outcome::Censored;
  fail("unknown outcome '", s, "'");
}

/// Minimum gap between leaving NIV/intubation and an HFNC start that opens a period.
inline constexpr Minutes kStepDownGuard = 30.0;

struct HFNCPeriod {
  std::string episode_id;
  Minutes start = 0;
  Minutes end = 0;
  Outcome outcome = Outcome::Success;
  Minutes resolution_time = 0;

  friend bool operator==(const HFNCPeriod&, const HFNCPeriod&) = default;
};

struct LabelSeries {
  std::vector<Minutes> times;
  std::vector<double> labels;  // 0, 1 or NaN
};

struct HFNCTrial {
  std::string episode_id;
  std::string patient_id;
  std::string trial_id;
  Minutes slice_end = 0;
  HFNCPeriod target_period;
  LabelSeries label_series;
  bool respiratory = false;
};

/// Disposition mapping for periods cut short by discharge. Dispositions not
/// listed as favourable are censored unless overridden here.
struct OutcomeRules {
  Outcome died_in_window = Outcome::Censored;
  Outcome still_admitted_in_window = Outcome::Censored;
};

// ---------------------------------------------------------------------------
// assign_outcome

struct OutcomeAssignment {
  Outcome outcome = Outcome::Success;
  Minutes resolution_time = 0;
};

inline OutcomeAssignment assign_outcome(const HFNCPeriod& period, const Episode& episode,
                                        const OutcomeRules& rules = {}) {
  for (const auto& ev : episode.support_events) {
    if (ev.time < period.start) continue;
    if (ev.time > period.end) break;
    if (ev.action == SupportAction::Start && is_escalation(ev.modality)) {
      return {Outcome::Failure, ev.time};
    }
  }
  if (episode.discharge_time < period.start + kPeriodLength) {
    switch (episode.disposition) {
      case Disposition::GeneralCareFloor:
      case Disposition::Home:
      case Disposition::StepDownUnit:
        return {Outcome::Success, episode.discharge_time};
      case Disposition::Died:
        return {rules.died_in_window, episode.discharge_time};
      case Disposition::StillAdmitted:
        return {rules.still_admitted_in_window, episode.discharge_time};
      default:
        return {Outcome::Censored, episode.discharge_time};
    }
  }
  return {Outcome::Success, period.end};
}

// ---------------------------------------------------------------------------
// derive_periods

/// An HFNC start opens a period iff no HFNC ran in the preceding 24 hours
/// (measured from the last HFNC stop) and no NIV/intubation is active or was
/// stopped less than 30 minutes earlier. Outcomes are assigned on return.
inline std::vector<HFNCPeriod> derive_periods(const Episode& episode, const OutcomeRules& rules = {}) {
  std::vector<HFNCPeriod> periods;
  std::optional<Minutes> last_hfnc_stop;
  std::optional<Minutes> last_stepdown;
  std::map<Modality, bool> active;

  for (const auto& ev : episode.support_events) {
    if (ev.action == SupportAction::Stop) {
      active[ev.modality] = false;
      if (ev.modality == Modality::HFNC) {
        last_hfnc_stop = ev.time;
      } else {
        last_stepdown = ev.time;
      }
      continue;
    }
    active[ev.modality] = true;
    if (ev.modality != Modality::HFNC) continue;

    const bool hfnc_free = !last_hfnc_stop || ev.time - *last_hfnc_stop >= kPeriodLength;
    const bool inside_prior = !periods.empty() && ev.time < periods.back().start + kPeriodLength;
    bool escalated_now = false;
    for (auto m : {Modality::BiPAP, Modality::NIMV, Modality::Intubation}) escalated_now |= active[m];
    const bool guard_ok = !last_stepdown || ev.time - *last_stepdown >= kStepDownGuard;
    if (!hfnc_free || inside_prior || escalated_now || !guard_ok) continue;

    HFNCPeriod p;
    p.episode_id = episode.episode_id;
    p.start = ev.time;
    p.end = std::min(ev.time + kPeriodLength, episode.discharge_time);
    periods.push_back(p);
  }
  for (auto& p : periods) {
    auto a = assign_outcome(p, episode, rules);
    p.outcome = a.outcome;
    p.resolution_time = a.resolution_time;
  }
  return periods;
}

// ---------------------------------------------------------------------------
// label_timesteps / build_trials

/// NaN before the period start, the outcome label from start through
/// resolution_time, nothing afterwards.
inline LabelSeries label_timesteps(const HFNCPeriod& period, const std::vector<Minutes>& charting_times) {
  for (std::size_t i = 1; i < charting_times.size(); ++i) {
    if (!(charting_times[i - 1] < charting_times[i])) fail("charting times must be strictly ascending");
  }
  LabelSeries out;
  const double y = period.outcome == Outcome::Failure ? 1.0 : 0.0;
  for (Minutes t : charting_times) {
    if (t > period.resolution_time) break;
    out.times.push_back(t);
    out.labels.push_back(t < period.start ? kNaN : y);
  }
  return out;
}

/// Distinct observation times in [0, until].
inline std::vector<Minutes> charting_times(const Episode& episode, Minutes until) {
  std::vector<Minutes> times;
  for (const auto& r : episode.records) {
    if (r.time > until) break;
    if (times.empty() || times.back() != r.time) times.push_back(r.time);
  }
  return times;
}

inline std::string make_trial_id(const std::string& episode_id, std::size_t period_index) {
  return str_cat(episode_id, "#", period_index + 1);
}

/// One trial per non-censored period; the slice runs from admission to that
/// period's end and only that period is labeled.
inline std::vector<HFNCTrial> build_trials(const Episode& episode, const std::vector<HFNCPeriod>& periods) {
  std::vector<HFNCTrial> trials;
  for (std::size_t i = 0; i < periods.size(); ++i) {
    const HFNCPeriod& p = periods[i];
    if (p.outcome == Outcome::Censored) continue;
    HFNCTrial t;
    t.episode_id = episode.episode_id;
    t.patient_id = episode.patient_id;
    t.trial_id = make_trial_id(episode.episode_id, i);
    t.slice_end = p.end;
    t.target_period = p;
    t.respiratory = episode.has_tag("respiratory");
    t.label_series = label_timesteps(p, charting_times(episode, p.end));
    trials.push_back(std::move(t));
  }
  return trials;
}

// ---------------------------------------------------------------------------
// apply_exclusions

enum class ExclusionReason { None, Age, Apnea, CareOrder, OperatingRoomTruncated, AmbiguousDisposition, NoHFNC };

inline const char* to_string(ExclusionReason r) {
  switch (r) {
    case ExclusionReason::None: return "";
    case ExclusionReason::Age: return "age>=19";
    case ExclusionReason::Apnea: return "apnea";
    case ExclusionReason::CareOrder: return "DNR/DNI";
    case ExclusionReason::OperatingRoomTruncated: return "OR-truncated";
    case ExclusionReason::AmbiguousDisposition: return "ambiguous-disposition";
    case ExclusionReason::NoHFNC: return "no-HFNC";
  }
  return "?";
}

inline ExclusionReason parse_exclusion_reason(const std::string& s) {
  for (auto r : {ExclusionReason::None, ExclusionReason::Age, ExclusionReason::Apnea, ExclusionReason::CareOrder,
                 ExclusionReason::OperatingRoomTruncated, ExclusionReason::AmbiguousDisposition,
                 ExclusionReason::NoHFNC}) {
    if (s == to_string(r)) return r;
  }
  fail("unknown exclusion reason '", s, "'");
}

struct ExclusionReport {
  std::string episode_id;
  bool included = true;
  ExclusionReason reason = ExclusionReason::None;
};

inline constexpr double kMaxAgeYears = 19.0;

/// First matching rule wins, in the order of ExclusionReason.
inline ExclusionReport apply_exclusions(const Episode& episode, const std::vector<HFNCPeriod>& periods) {
  ExclusionReport rep{episode.episode_id, false, ExclusionReason::None};
  const bool truncated = !periods.empty() && episode.discharge_time < periods.back().start + kPeriodLength;
  if (episode.age_at_admission >= kMaxAgeYears) {
    rep.reason = ExclusionReason::Age;
  } else if (episode.has_tag("apnea")) {
    rep.reason = ExclusionReason::Apnea;
  } else if (episode.has_flag("DNR") || episode.has_flag("DNI")) {
    rep.reason = ExclusionReason::CareOrder;
  } else if (truncated && episode.disposition == Disposition::OperatingRoom) {
    rep.reason = ExclusionReason::OperatingRoomTruncated;
  } else if (truncated && (episode.disposition == Disposition::AnotherHospitalICU ||
                           episode.disposition == Disposition::AnotherICUCurrentHospital)) {
    rep.reason = ExclusionReason::AmbiguousDisposition;
  } else if (periods.empty()) {
    rep.reason = ExclusionReason::NoHFNC;
  } else {
    rep.included = true;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Whole-cohort segmentation

struct Segmentation {
  std::vector<ExclusionReport> exclusions;            // one per episode, input order
  std::map<std::string, std::vector<HFNCPeriod>> periods;  // every episode
  std::vector<HFNCTrial> trials;                      // included episodes only
};

inline Segmentation segment_cohort(const std::vector<Episode>& episodes, const OutcomeRules& rules = {}) {
  Segmentation seg;
  for (const auto& ep : episodes) {
    auto periods = derive_periods(ep, rules);
    auto rep = apply_exclusions(ep, periods);
    if (rep.included) {
      auto trials = build_trials(ep, periods);
      for (auto& t : trials) seg.trials.push_back(std::move(t));
    }
    seg.exclusions.push_back(rep);
    seg.periods.emplace(ep.episode_id, std::move(periods));
  }
  return seg;
}

// ---------------------------------------------------------------------------
// split_cohort

enum class Partition { Training, Validation, Test };

inline const char* to_string(Partition p) {
  switch (p) {
    case Partition::Training: return "training";
    case Partition::Validation: return "validation";
    case Partition::Test: return "test";
  }
  return "?";
}

inline Partition parse_partition(const std::string& s) {
  if (s == "training") return Partition::Training;
  if (s == "validation") return Partition::Validation;
  if (s == "test") return Partition::Test;
  fail("unknown partition '", s, "'");
}

using SplitRatios = std::array<double, 3>;

/// Patient counts behind the reference cohort split (341 / 138 / 158 of 637).
inline constexpr SplitRatios kDefaultSplitRatios{341.0 / 637.0, 138.0 / 637.0, 158.0 / 637.0};

/// Patient-level random split: patients are shuffled with the seed and cut
/// into round(n * ratio) blocks; every trial follows its patient.
inline std::map<std::string, Partition> split_cohort(const std::vector<HFNCTrial>& trials, const SplitRatios& ratios,
                                                     std::uint64_t seed) {
  if (trials.empty()) fail("split_cohort: empty cohort");
  double total = 0;
  for (double r : ratios) {
    if (!(r >= 0)) fail("split_cohort: ratios must be non-negative");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) fail("split_cohort: ratios must sum to 1 (got ", total, ")");

  std::set<std::string> unique;
  for (const auto& t : trials) unique.insert(t.patient_id);
  std::vector<std::string> patients(unique.begin(), unique.end());
  Rng rng(mix_seed({seed, 0x5911173ULL}));
  seeded_shuffle(patients, rng);

  const double n = static_cast<double>(patients.size());
  const auto n_train = static_cast<std::size_t>(std::llround(n * ratios[0]));
  const auto n_val = std::min(patients.size() - n_train, static_cast<std::size_t>(std::llround(n * ratios[1])));
  std::map<std::string, Partition> out;
  for (std::size_t i = 0; i < patients.size(); ++i) {
    Partition p = i < n_train ? Partition::Training : i < n_train + n_val ? Partition::Validation : Partition::Test;
    out.emplace(patients[i], p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Files: trial manifest JSON-lines and exclusion CSV

struct TrialManifestEntry {
  std::string episode_id;
  std::string patient_id;
  std::string trial_id;
  Minutes period_start = 0;
  Minutes period_end = 0;
  Outcome outcome = Outcome::Success;
  Minutes resolution_time = 0;
  Partition partition = Partition::Training;
  bool respiratory = false;
};

inline json to_json(const TrialManifestEntry& e) {
  return json{{"episode_id", e.episode_id},   {"patient_id", e.patient_id},
              {"trial_id", e.trial_id},       {"period_start", e.period_start},
              {"period_end", e.period_end},   {"outcome", to_string(e.outcome)},
              {"resolution_time", e.resolution_time}, {"partition", to_string(e.partition)},
              {"respiratory", e.respiratory}};
}

inline TrialManifestEntry trial_entry_from_json(const json& j) {
  TrialManifestEntry e;
  e.episode_id = j.at("episode_id").get<std::string>();
  e.patient_id = j.at("patient_id").get<std::string>();
  e.trial_id = j.at("trial_id").get<std::string>();
  e.period_start = j.at("period_start").get<double>();
  e.period_end = j.at("period_end").get<double>();
  e.outcome = parse_outcome(j.at("outcome").get<std::string>());
  e.resolution_time = j.at("resolution_time").get<double>();
  e.partition = parse_partition(j.at("partition").get<std::string>());
  e.respiratory = j.value("respiratory", false);
  return e;
}

inline void write_exclusions_csv(std::ostream& os, const std::vector<ExclusionReport>& reports) {
  os << "episode_id,decision,reason\n";
  for (const auto& r : reports) {
    os << r.episode_id << ',' << (r.included ? "included" : "excluded") << ',' << to_string(r.reason) << '\n';
  }
}

}  // namespace hfnc

#pragma once

// Synthetic cohorts with a planted, dial-able signal.
//
// Every trial-producing episode is built from an explicit plan (period
// starts, outcomes, resolution times), and that plan is written to the
// ground-truth manifest without going through the trial engine. A latent
// per-trial severity drives both the size of the respiratory drift in
// failing trials and how early they fail.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "hfnc/catalog.hpp"
#include "hfnc/common.hpp"
#include "hfnc/trial_engine.hpp"

namespace hfnc {

struct SynthConfig {
  std::size_t n_patients = 637;
  std::size_t n_trials = 834;
  double failure_rate = 0.21;
  double respiratory_fraction = 0.706;
  /// Share of trial-producing episodes that contain two HFNC periods.
  double multi_initiation_fraction = 119.0 / 715.0;
  /// Extra episodes cut short inside their only HFNC period (censoring or
  /// ambiguous dispositions), relative to trial-producing episodes.
  double censoring_fraction = 0.08;
  /// Extra excluded episodes per rule (age, apnea, DNR/DNI, guarded step-down),
  /// relative to trial-producing episodes.
  double exclusion_fraction = 0.02;
  double discharge_in_window_fraction = 0.12;
  double reinit_within_period_fraction = 0.12;
  double stepdown_fraction = 0.08;
  double vitals_interval_median_min = 60.0;
  double labs_interval_median_min = 360.0;
  double min_interval_min = 1.0;
  double max_interval_min = 240.0;
  double failure_median_hours = 7.6;
  double failure_p80_hours = 14.1;
  double signal_strength = 0.5;
  double mortality_rate = 0.05;
  std::size_t n_pretext_episodes = 200;
  double pretext_mortality_rate = 0.2;
  std::uint64_t seed = 20240601;

  friend bool operator==(const SynthConfig&, const SynthConfig&) = default;
};

// ---------------------------------------------------------------------------
// Config JSON

inline json to_json(const SynthConfig& c) {
  return json{{"n_patients", c.n_patients},
              {"n_trials", c.n_trials},
              {"failure_rate", c.failure_rate},
              {"respiratory_fraction", c.respiratory_fraction},
              {"multi_initiation_fraction", c.multi_initiation_fraction},
              {"censoring_fraction", c.censoring_fraction},
              {"exclusion_fraction", c.exclusion_fraction},
              {"discharge_in_window_fraction", c.discharge_in_window_fraction},
              {"reinit_within_period_fraction", c.reinit_within_period_fraction},
              {"stepdown_fraction", c.stepdown_fraction},
              {"vitals_interval_median_min", c.vitals_interval_median_min},
              {"labs_interval_median_min", c.labs_interval_median_min},
              {"min_interval_min", c.min_interval_min},
              {"max_interval_min", c.max_interval_min},
              {"failure_median_hours", c.failure_median_hours},
              {"failure_p80_hours", c.failure_p80_hours},
              {"signal_strength", c.signal_strength},
              {"mortality_rate", c.mortality_rate},
              {"n_pretext_episodes", c.n_pretext_episodes},
              {"pretext_mortality_rate", c.pretext_mortality_rate},
              {"seed", c.seed}};
}

inline SynthConfig synth_config_from_json(const json& j) {
  SynthConfig c;
  const json defaults = to_json(c);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!defaults.contains(it.key())) fail("synth config: unknown key '", it.key(), "'");
  }
  json merged = defaults;
  merged.update(j);
  try {
    c.n_patients = merged["n_patients"].get<std::size_t>();
    c.n_trials = merged["n_trials"].get<std::size_t>();
    c.failure_rate = merged["failure_rate"].get<double>();
    c.respiratory_fraction = merged["respiratory_fraction"].get<double>();
    c.multi_initiation_fraction = merged["multi_initiation_fraction"].get<double>();
    c.censoring_fraction = merged["censoring_fraction"].get<double>();
    c.exclusion_fraction = merged["exclusion_fraction"].get<double>();
    c.discharge_in_window_fraction = merged["discharge_in_window_fraction"].get<double>();
    c.reinit_within_period_fraction = merged["reinit_within_period_fraction"].get<double>();
    c.stepdown_fraction = merged["stepdown_fraction"].get<double>();
    c.vitals_interval_median_min = merged["vitals_interval_median_min"].get<double>();
    c.labs_interval_median_min = merged["labs_interval_median_min"].get<double>();
    c.min_interval_min = merged["min_interval_min"].get<double>();
    c.max_interval_min = merged["max_interval_min"].get<double>();
    c.failure_median_hours = merged["failure_median_hours"].get<double>();
    c.failure_p80_hours = merged["failure_p80_hours"].get<double>();
    c.signal_strength = merged["signal_strength"].get<double>();
    c.mortality_rate = merged["mortality_rate"].get<double>();
    c.n_pretext_episodes = merged["n_pretext_episodes"].get<std::size_t>();
    c.pretext_mortality_rate = merged["pretext_mortality_rate"].get<double>();
    c.seed = merged["seed"].get<std::uint64_t>();
  } catch (const json::exception& ex) {
    fail("synth config: ", ex.what());
  }
  return c;
}

inline void validate(const SynthConfig& c) {
  auto rate = [](double v, const char* name) {
    if (!(v >= 0 && v <= 1)) fail("synth config: ", name, " must be in [0,1]");
  };
  rate(c.failure_rate, "failure_rate");
  rate(c.respiratory_fraction, "respiratory_fraction");
  rate(c.multi_initiation_fraction, "multi_initiation_fraction");
  rate(c.censoring_fraction, "censoring_fraction");
  rate(c.exclusion_fraction, "exclusion_fraction");
  rate(c.discharge_in_window_fraction, "discharge_in_window_fraction");
  rate(c.reinit_within_period_fraction, "reinit_within_period_fraction");
  rate(c.stepdown_fraction, "stepdown_fraction");
  rate(c.signal_strength, "signal_strength");
  rate(c.mortality_rate, "mortality_rate");
  rate(c.pretext_mortality_rate, "pretext_mortality_rate");
  if (c.n_patients == 0) fail("synth config: n_patients must be positive");
  if (c.n_trials < c.n_patients) {
    fail("synth config: infeasible, ", c.n_trials, " trials < ", c.n_patients, " patients x 1 trial");
  }
  if (!(c.min_interval_min >= 1 && c.min_interval_min <= c.max_interval_min)) {
    fail("synth config: need 1 <= min_interval_min <= max_interval_min");
  }
  if (!(c.vitals_interval_median_min > 0 && c.labs_interval_median_min > 0)) {
    fail("synth config: charting medians must be positive");
  }
  if (!(c.failure_median_hours > 0 && c.failure_median_hours < c.failure_p80_hours && c.failure_p80_hours < 24.0)) {
    fail("synth config: need 0 < failure_median_hours < failure_p80_hours < 24");
  }
}

// ---------------------------------------------------------------------------
// Failure-time distribution: log-normal truncated to the 24-hour window,
// with (mu, sigma) solved so the truncated median and 80th percentile hit
// the configured targets.

class TruncatedLogNormal {
 public:
  TruncatedLogNormal(double median_h, double p80_h, double upper_h = 24.0) : upper_(upper_h) {
    const double a = std::log(median_h), b = std::log(p80_h), c = std::log(upper_h);
    auto mu_for = [&](double sigma) {
      // Phi((a-mu)/s) / Phi((c-mu)/s) decreases in mu; solve for 0.5.
      double lo = a - 20 * sigma, hi = a + 20 * sigma;
      for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        const double r = phi((a - mid) / sigma) / phi((c - mid) / sigma);
        (r > 0.5 ? lo : hi) = mid;
      }
      return 0.5 * (lo + hi);
    };
    auto resid = [&](double sigma) {
      const double mu = mu_for(sigma);
      return phi((b - mu) / sigma) / phi((c - mu) / sigma) - 0.8;
    };
    double lo = 0.05, hi = 5.0;
    const double r_lo = resid(lo);
    for (int i = 0; i < 200; ++i) {
      const double mid = 0.5 * (lo + hi);
      ((resid(mid) > 0) == (r_lo > 0) ? lo : hi) = mid;
    }
    sigma_ = 0.5 * (lo + hi);
    mu_ = mu_for(sigma_);
    mass_ = phi((c - mu_) / sigma_);
  }

  double mu() const { return mu_; }
  double sigma() const { return sigma_; }

  double cdf(double hours) const {
    if (hours <= 0) return 0;
    if (hours >= upper_) return 1;
    return phi((std::log(hours) - mu_) / sigma_) / mass_;
  }

  /// Inverse CDF for u in (0,1).
  double quantile(double u) const {
    double lo = 0, hi = upper_;
    for (int i = 0; i < 100; ++i) {
      const double mid = 0.5 * (lo + hi);
      (cdf(mid) < u ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  }

  static double phi(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

 private:
  double upper_;
  double mu_ = 0, sigma_ = 1, mass_ = 1;
};

// ---------------------------------------------------------------------------
// Catalog used by generated cohorts

inline Catalog synthetic_catalog() {
  auto phys = [](std::string n, std::string unit, double lo, double hi, std::optional<std::string> group = {}) {
    return VariableSpec{std::move(n), VariableKind::Physiologic, std::move(unit), lo, hi, std::nullopt, std::move(group)};
  };
  auto lab = [](std::string n, std::string unit, double lo, double hi) {
    return VariableSpec{std::move(n), VariableKind::Lab, std::move(unit), lo, hi, std::nullopt, std::nullopt};
  };
  auto drug = [](std::string n, std::string unit, double hi, double tmax) {
    return VariableSpec{std::move(n), VariableKind::Drug, std::move(unit), 0.0, hi, tmax, std::nullopt};
  };
  auto interv = [](std::string n, std::string unit, double hi, double tmax) {
    return VariableSpec{std::move(n), VariableKind::Intervention, std::move(unit), 0.0, hi, tmax, std::nullopt};
  };
  auto demo = [](std::string n, std::string unit, double lo, double hi) {
    return VariableSpec{std::move(n), VariableKind::Demographic, std::move(unit), lo, hi, std::nullopt, std::nullopt};
  };
  return Catalog({
      phys("heart_rate", "bpm", 0, 400),
      phys("resp_rate", "breaths/min", 0, 150),
      phys("spo2", "%", 0, 100),
      phys("fio2", "fraction", 0.21, 1.0),
      phys("sf_ratio", "ratio", 0, 500),
      phys("temperature", "C", 25, 45),
      phys("sbp_invasive", "mmHg", 0, 300, "sbp"),
      phys("sbp_noninvasive", "mmHg", 0, 300, "sbp"),
      phys("dbp", "mmHg", 0, 250),
      lab("pco2", "mmHg", 5, 200),
      lab("ph", "pH", 6.5, 8.0),
      lab("wbc", "10^3/uL", 0, 200),
      lab("lactate", "mmol/L", 0, 30),
      lab("glucose", "mg/dL", 10, 1500),
      lab("creatinine", "mg/dL", 0, 20),
      drug("epinephrine", "mcg/kg/min", 5, 1.0),
      drug("furosemide", "mg/kg", 20, 2.0),
      drug("albuterol", "mg", 100, 20.0),
      drug("dexmedetomidine", "mcg/kg/h", 10, 2.0),
      drug("inhaled_nitric_oxide", "ppm", 80, 40.0),
      interv("hfnc_flow", "L/min", 80, 60.0),
      interv("hfnc", "on/off", 1, 1.0),
      interv("bipap", "on/off", 1, 1.0),
      interv("nimv", "on/off", 1, 1.0),
      interv("intubation", "on/off", 1, 1.0),
      demo("age", "years", 0, 120),
      demo("sex_female", "flag", 0, 1),
      demo("weight", "kg", 0.3, 250),
  });
}

// ---------------------------------------------------------------------------
// Ground truth

struct ManifestPeriod {
  Minutes start = 0;
  Minutes end = 0;
  Outcome outcome = Outcome::Success;
  Minutes resolution_time = 0;
};

struct ManifestEpisode {
  std::string episode_id;
  std::string patient_id;
  std::vector<std::string> scenarios;
  bool included = true;
  ExclusionReason exclusion = ExclusionReason::None;
  std::vector<ManifestPeriod> periods;
};

inline json to_json(const ManifestEpisode& m) {
  json periods = json::array();
  for (const auto& p : m.periods) {
    periods.push_back({{"start", p.start},
                       {"end", p.end},
                       {"outcome", to_string(p.outcome)},
                       {"resolution_time", p.resolution_time}});
  }
  return json{{"episode_id", m.episode_id},
              {"patient_id", m.patient_id},
              {"scenarios", m.scenarios},
              {"decision", m.included ? "included" : "excluded"},
              {"reason", to_string(m.exclusion)},
              {"periods", periods}};
}

inline ManifestEpisode manifest_episode_from_json(const json& j) {
  ManifestEpisode m;
  m.episode_id = j.at("episode_id").get<std::string>();
  m.patient_id = j.at("patient_id").get<std::string>();
  m.scenarios = j.at("scenarios").get<std::vector<std::string>>();
  m.included = j.at("decision").get<std::string>() == "included";
  m.exclusion = parse_exclusion_reason(j.at("reason").get<std::string>());
  for (const auto& p : j.at("periods")) {
    m.periods.push_back({p.at("start").get<double>(), p.at("end").get<double>(),
                         parse_outcome(p.at("outcome").get<std::string>()), p.at("resolution_time").get<double>()});
  }
  return m;
}

struct SyntheticCohort {
  Catalog catalog;
  std::vector<Episode> episodes;  // records time-sorted, support events lifted
  std::vector<ManifestEpisode> manifest;
  std::map<std::string, std::size_t> scenario_counts;

  std::vector<ObservationRecord> all_records() const {
    std::vector<ObservationRecord> out;
    for (const auto& e : episodes) {
      auto f = flatten(e);
      std::stable_sort(f.begin(), f.end(), [](const auto& a, const auto& b) { return a.time < b.time; });
      out.insert(out.end(), f.begin(), f.end());
    }
    return out;
  }
};

/// Scenario classes every default cohort is expected to contain.
inline const std::vector<std::string>& required_scenarios() {
  static const std::vector<std::string> kScenarios{
      "single_period",         "reinit_within_period", "reinit_after_24h",   "stepdown_after_guard",
      "stepdown_guard_blocked", "discharge_in_window", "censored_died",      "censored_still_admitted",
      "or_truncated",          "ambiguous_disposition", "age_excluded",      "apnea_excluded",
      "care_order_excluded",   "failure",              "success",            "pretext_only"};
  return kScenarios;
}

// ---------------------------------------------------------------------------
// Generator

namespace detail {

struct VitalSpec {
  const char* name;
  double mean;
  double sd;
  double lo;  // physical clip
  double hi;
  double fail_effect;  // sd units per unit of respiratory severity
  double death_effect;  // sd units per unit of mortality severity
};

// Population charting distributions; effects are in units of sd.
inline const std::array<VitalSpec, 7>& vital_specs() {
  static const std::array<VitalSpec, 7> kVitals{{
      {"heart_rate", 130, 20, 40, 250, 0.6, 1.0},
      {"resp_rate", 35, 10, 8, 100, 1.2, 0.3},
      {"spo2", 95, 3, 60, 100, -1.0, -0.6},
      {"fio2", 0.40, 0.10, 0.21, 1.0, 1.0, 0.4},
      {"temperature", 37.2, 0.6, 34, 41, 0.0, 0.2},
      {"sbp", 100, 12, 40, 180, 0.0, -1.0},
      {"dbp", 60, 10, 20, 120, 0.0, -0.6},
  }};
  return kVitals;
}

inline const std::array<VitalSpec, 6>& lab_specs() {
  static const std::array<VitalSpec, 6> kLabs{{
      {"pco2", 45, 8, 15, 120, 1.0, 0.3},
      {"ph", 7.36, 0.05, 6.9, 7.7, -1.0, -0.5},
      {"wbc", 11, 4, 0.5, 60, 0.3, 0.3},
      {"lactate", 1.5, 0.7, 0.2, 15, 0.2, 1.2},
      {"glucose", 110, 25, 30, 400, 0.0, 0.3},
      {"creatinine", 0.4, 0.15, 0.05, 5, 0.0, 0.5},
  }};
  return kLabs;
}

struct TherapyPlan {
  const char* name;
  double typical;
  double episode_prob;
};

inline const std::array<TherapyPlan, 5>& therapy_plans() {
  static const std::array<TherapyPlan, 5> kPlans{{
      {"epinephrine", 0.1, 0.08},
      {"furosemide", 1.0, 0.2},
      {"albuterol", 5.0, 0.35},
      {"dexmedetomidine", 0.6, 0.3},
      {"inhaled_nitric_oxide", 20.0, 0.004},
  }};
  return kPlans;
}

/// Time-varying severity: respiratory drift around failing periods and a
/// constant mortality drift for episodes that end in death.
struct SeverityWindow {
  Minutes from = 0;
  Minutes ramp_start = 0;
  Minutes until = 0;  // drift ends here (escalation time)
  double level = 0;   // respiratory severity (signal * per-trial factor)
};

struct EpisodePlan {
  Episode ep;
  std::vector<SeverityWindow> windows;
  double mortality_severity = 0;
  std::vector<std::pair<Minutes, Minutes>> hfnc_on;  // intervals with HFNC running
  std::vector<Minutes> forced_vitals;                // HFNC starts get a vitals set
};

class Builder {
 public:
  explicit Builder(const SynthConfig& cfg)
      : cfg_(cfg), rng_(mix_seed({cfg.seed, 0x5E7ULL})), ttf_(cfg.failure_median_hours, cfg.failure_p80_hours) {}

  double u() { return uniform01(rng_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * u(); }
  Minutes minutes(double lo, double hi) { return std::round(uniform(lo, hi)); }
  double normal() {
    // Box-Muller
    double u1 = u();
    while (u1 <= 0) u1 = u();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u());
  }
  bool coin(double p) { return u() < p; }
  Rng& rng() { return rng_; }
  const TruncatedLogNormal& ttf() const { return ttf_; }
  const SynthConfig& cfg() const { return cfg_; }

  double interval(double median) {
    const double v = median * std::exp(0.6 * normal());
    return std::round(std::clamp(v, cfg_.min_interval_min, cfg_.max_interval_min));
  }

  double draw_age() {
    const double r = u();
    if (r < 0.454) return uniform(0.0, 1.0);
    if (r < 0.454 + 0.365) return uniform(1.0, 5.0);
    if (r < 0.454 + 0.365 + 0.072) return uniform(5.0, 10.0);
    return uniform(10.0, 18.99);
  }

  Disposition favourable() {
    const double r = u();
    return r < 0.6 ? Disposition::GeneralCareFloor : r < 0.8 ? Disposition::StepDownUnit : Disposition::Home;
  }

  Modality escalation_modality() {
    const double r = u();
    return r < 0.45 ? Modality::BiPAP : r < 0.7 ? Modality::NIMV : Modality::Intubation;
  }

 private:
  SynthConfig cfg_;
  Rng rng_;
  TruncatedLogNormal ttf_;
};

inline void add_event(EpisodePlan& plan, Minutes t, Modality m, SupportAction a) {
  plan.ep.support_events.push_back({t, m, a});
}

/// Charted observations for a fully planned episode.
inline void chart_episode(Builder& b, EpisodePlan& plan) {
  Episode& ep = plan.ep;
  auto resp_severity = [&](Minutes t) {
    double s = 0;
    for (const auto& w : plan.windows) {
      if (t < w.from || t > w.until) continue;
      const double progress = w.until > w.ramp_start ? std::clamp((t - w.ramp_start) / (w.until - w.ramp_start), 0.0, 1.0) : 1.0;
      s = std::max(s, w.level * (0.7 + 0.3 * progress));
    }
    return s;
  };
  auto hfnc_active = [&](Minutes t) {
    for (const auto& [a, z] : plan.hfnc_on) {
      if (t >= a && t < z) return true;
    }
    return false;
  };

  // Patient-level offsets, in sd units.
  std::map<std::string, double> offset;
  for (const auto& v : vital_specs()) offset[v.name] = 0.6 * b.normal();
  for (const auto& v : lab_specs()) offset[v.name] = 0.6 * b.normal();

  auto value_for = [&](const VitalSpec& v, Minutes t) {
    const double shift = v.fail_effect * resp_severity(t) + v.death_effect * plan.mortality_severity;
    const double x = v.mean + v.sd * (offset[v.name] + shift + 0.4 * b.normal());
    return std::clamp(x, v.lo, v.hi);
  };
  auto push = [&](Minutes t, const std::string& var, double value) { ep.records.push_back({ep.episode_id, t, var, value}); };
  auto round_to = [](double v, double q) { return std::round(v / q) * q; };

  // Vitals sets.
  std::vector<Minutes> vital_times;
  for (Minutes t = 0; t <= ep.discharge_time; t += b.interval(b.cfg().vitals_interval_median_min)) vital_times.push_back(t);
  for (Minutes t : plan.forced_vitals) {
    if (t <= ep.discharge_time) vital_times.push_back(t);
  }
  std::sort(vital_times.begin(), vital_times.end());
  vital_times.erase(std::unique(vital_times.begin(), vital_times.end()), vital_times.end());

  std::vector<std::pair<std::string, double>> therapies;
  for (const auto& tp : therapy_plans()) {
    if (b.coin(tp.episode_prob)) therapies.emplace_back(tp.name, tp.typical);
  }
  const bool invasive_bp = b.coin(0.25);

  push(0, "weight", round_to(std::clamp(3.5 + 5.0 * ep.age_at_admission * (1.0 + 0.2 * b.normal()), 0.5, 200.0), 0.1));
  for (Minutes t : vital_times) {
    double spo2 = 0, fio2 = 0;
    bool have_spo2 = false, have_fio2 = false;
    for (const auto& v : vital_specs()) {
      const std::string name = v.name;
      const double miss = name == "temperature" ? 0.7 : 0.1;
      if (b.coin(miss)) continue;
      const double x = value_for(v, t);
      if (name == "sbp") {
        push(t, invasive_bp ? "sbp_invasive" : "sbp_noninvasive", std::round(x));
      } else if (name == "spo2") {
        spo2 = std::round(x);
        have_spo2 = true;
        push(t, name, spo2);
      } else if (name == "fio2") {
        fio2 = round_to(x, 0.01);
        have_fio2 = true;
        push(t, name, fio2);
      } else if (name == "temperature") {
        push(t, name, round_to(x, 0.1));
      } else {
        push(t, name, std::round(x));
      }
    }
    if (have_spo2 && have_fio2) push(t, "sf_ratio", round_to(spo2 / fio2, 0.1));
    if (hfnc_active(t)) push(t, "hfnc_flow", std::round(std::clamp(8.0 + 1.5 * ep.age_at_admission + 3.0 * b.normal(), 2.0, 60.0)));
    for (const auto& [name, typical] : therapies) {
      if (b.coin(0.3)) push(t, name, round_to(typical * std::exp(0.3 * b.normal()), 0.01));
    }
    // Rare charting artefact: exercises the plausibility filter.
    if (b.coin(0.002)) push(t, "heart_rate", 450);
  }

  // Labs.
  for (Minutes t = b.minutes(0, 120); t <= ep.discharge_time; t += b.interval(b.cfg().labs_interval_median_min)) {
    for (const auto& v : lab_specs()) {
      if (b.coin(0.3)) continue;
      const double x = value_for(v, t);
      const std::string name = v.name;
      push(t, name, name == "ph" ? round_to(x, 0.01) : round_to(x, 0.1));
    }
  }
  std::stable_sort(ep.records.begin(), ep.records.end(), [](const auto& a, const auto& c) { return a.time < c.time; });
  std::stable_sort(ep.support_events.begin(), ep.support_events.end(),
                   [](const auto& a, const auto& c) { return a.time < c.time; });
}

struct PeriodPlan {
  bool failure = false;
  bool in_window_discharge = false;
  bool reinit = false;
  bool stepdown = false;
  bool guarded_prefix = false;
};

/// Builds one HFNC period starting no earlier than `cursor`; returns the
/// manifest period and advances the cursor to the earliest time the next
/// period may start.
inline ManifestPeriod plan_period(Builder& b, EpisodePlan& plan, Minutes& cursor, const PeriodPlan& pp,
                                  std::vector<std::string>& scenarios) {
  const double S = b.cfg().signal_strength;
  Minutes t = cursor;
  if (pp.guarded_prefix) {
    // On invasive support, stepped down to HFNC too soon: no period.
    add_event(plan, t, Modality::Intubation, SupportAction::Start);
    const Minutes down = t + b.minutes(6 * 60, 48 * 60);
    add_event(plan, down, Modality::Intubation, SupportAction::Stop);
    const Minutes h = down + b.minutes(5, 25);
    add_event(plan, h, Modality::HFNC, SupportAction::Start);
    plan.forced_vitals.push_back(h);
    const Minutes h_stop = h + b.minutes(2 * 60, 10 * 60);
    add_event(plan, h_stop, Modality::HFNC, SupportAction::Stop);
    plan.hfnc_on.emplace_back(h, h_stop);
    t = h_stop + kPeriodLength + b.minutes(60, 12 * 60);
    scenarios.push_back("stepdown_guard_blocked");
  } else if (pp.stepdown) {
    const Modality m = b.coin(0.5) ? Modality::Intubation : Modality::BiPAP;
    add_event(plan, t, m, SupportAction::Start);
    const Minutes down = t + b.minutes(6 * 60, 48 * 60);
    add_event(plan, down, m, SupportAction::Stop);
    t = down + b.minutes(31, 180);
    scenarios.push_back("stepdown_after_guard");
  }

  ManifestPeriod mp;
  const Minutes s = t;
  mp.start = s;
  add_event(plan, s, Modality::HFNC, SupportAction::Start);
  plan.forced_vitals.push_back(s);

  Minutes hfnc_last_stop = s;
  bool hfnc_running = true;
  Minutes run_from = s;

  if (pp.failure) {
    const double uq = b.u();
    const Minutes ttf = std::clamp(std::round(60.0 * b.ttf().quantile(std::clamp(uq, 1e-6, 1 - 1e-6))), 1.0, kPeriodLength - 1);
    const Minutes esc = s + ttf;
    const double g = 1.5 - uq;  // earlier failures are more severe
    plan.windows.push_back({s - 120, s, esc, S * g});
    if (pp.reinit && ttf > 240) {
      const Minutes off = s + b.minutes(60, 120);
      const Minutes on = off + b.minutes(30, 90);
      add_event(plan, off, Modality::HFNC, SupportAction::Stop);
      add_event(plan, on, Modality::HFNC, SupportAction::Start);
      plan.hfnc_on.emplace_back(run_from, off);
      plan.forced_vitals.push_back(on);
      run_from = on;
      scenarios.push_back("reinit_within_period");
    }
    add_event(plan, esc, Modality::HFNC, SupportAction::Stop);
    plan.hfnc_on.emplace_back(run_from, esc);
    const Modality m = b.escalation_modality();
    add_event(plan, esc, m, SupportAction::Start);
    const Minutes esc_stop = esc + b.minutes(12 * 60, 72 * 60);
    add_event(plan, esc_stop, m, SupportAction::Stop);
    hfnc_last_stop = esc;
    hfnc_running = false;
    mp.outcome = Outcome::Failure;
    mp.resolution_time = esc;
    mp.end = s + kPeriodLength;
    cursor = std::max(hfnc_last_stop + kPeriodLength, esc_stop + 60) + b.minutes(60, 24 * 60);
    plan.ep.discharge_time = std::max(plan.ep.discharge_time, esc_stop + b.minutes(60, 12 * 60));
    plan.ep.discharge_time = std::max(plan.ep.discharge_time, mp.end + b.minutes(60, 12 * 60));
    scenarios.push_back("failure");
    return mp;
  }

  if (pp.reinit) {
    const Minutes off = s + b.minutes(60, 180);
    const Minutes on = off + b.minutes(30, 120);
    add_event(plan, off, Modality::HFNC, SupportAction::Stop);
    add_event(plan, on, Modality::HFNC, SupportAction::Start);
    plan.hfnc_on.emplace_back(run_from, off);
    plan.forced_vitals.push_back(on);
    run_from = on;
    scenarios.push_back("reinit_within_period");
  }
  mp.outcome = Outcome::Success;
  if (pp.in_window_discharge) {
    const Minutes dis = std::max(run_from + 60, s + b.minutes(4 * 60, 22 * 60));
    plan.ep.discharge_time = dis;
    plan.hfnc_on.emplace_back(run_from, dis);
    mp.end = dis;
    mp.resolution_time = dis;
    cursor = dis;
    scenarios.push_back("discharge_in_window");
  } else {
    const Minutes stop = run_from + b.minutes(6 * 60, 40 * 60);
    add_event(plan, stop, Modality::HFNC, SupportAction::Stop);
    plan.hfnc_on.emplace_back(run_from, stop);
    hfnc_last_stop = stop;
    hfnc_running = false;
    mp.end = s + kPeriodLength;
    mp.resolution_time = mp.end;
    cursor = hfnc_last_stop + kPeriodLength + b.minutes(60, 24 * 60);
    plan.ep.discharge_time = std::max(plan.ep.discharge_time, std::max(stop, mp.end) + b.minutes(60, 18 * 60));
  }
  (void)hfnc_running;
  scenarios.push_back("success");
  return mp;
}

}  // namespace detail

/// Builds a cohort per the config. Deterministic in the config (seed included).
inline SyntheticCohort generate_cohort(const SynthConfig& cfg) {
  validate(cfg);
  detail::Builder b(cfg);
  SyntheticCohort cohort;
  cohort.catalog = synthetic_catalog();

  // Trial-producing episodes: E episodes, m of them with two periods.
  auto E = static_cast<std::size_t>(std::llround(static_cast<double>(cfg.n_trials) / (1.0 + cfg.multi_initiation_fraction)));
  E = std::clamp<std::size_t>(E, cfg.n_patients, cfg.n_trials);
  const std::size_t m = cfg.n_trials - E;
  if (m > E) fail("synth config: infeasible, ", cfg.n_trials, " trials need more than two periods per episode");

  std::vector<std::size_t> episode_patient(E);
  for (std::size_t i = 0; i < E; ++i) {
    episode_patient[i] = i < cfg.n_patients ? i : static_cast<std::size_t>(b.rng()() % cfg.n_patients);
  }
  std::vector<std::size_t> order(E);
  for (std::size_t i = 0; i < E; ++i) order[i] = i;
  seeded_shuffle(order, b.rng());
  std::vector<bool> two_periods(E, false);
  for (std::size_t i = 0; i < m; ++i) two_periods[order[i]] = true;

  // Exactly round(n_trials * failure_rate) failing trials.
  const auto n_fail = static_cast<std::size_t>(std::llround(static_cast<double>(cfg.n_trials) * cfg.failure_rate));
  std::vector<bool> trial_fails(cfg.n_trials, false);
  {
    std::vector<std::size_t> idx(cfg.n_trials);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    seeded_shuffle(idx, b.rng());
    for (std::size_t i = 0; i < n_fail; ++i) trial_fails[idx[i]] = true;
  }

  // Patient-level attributes.
  std::vector<double> patient_age(cfg.n_patients);
  std::vector<std::string> patient_sex(cfg.n_patients);
  for (std::size_t p = 0; p < cfg.n_patients; ++p) {
    patient_age[p] = b.draw_age();
    patient_sex[p] = b.coin(0.432) ? "F" : "M";
  }

  std::size_t episode_counter = 0;
  auto next_episode_id = [&]() {
    std::string n = std::to_string(++episode_counter);
    return str_cat("E", std::string(5 - std::min<std::size_t>(5, n.size()), '0'), n);
  };
  auto patient_id = [](const char* prefix, std::size_t i) {
    std::string n = std::to_string(i + 1);
    return str_cat(prefix, std::string(4 - std::min<std::size_t>(4, n.size()), '0'), n);
  };

  auto finish = [&](detail::EpisodePlan& plan, ManifestEpisode me) {
    detail::chart_episode(b, plan);
    for (const auto& s : me.scenarios) cohort.scenario_counts[s]++;
    cohort.episodes.push_back(std::move(plan.ep));
    cohort.manifest.push_back(std::move(me));
  };

  auto base_episode = [&](const std::string& pid, double age, const std::string& sex, bool respiratory) {
    detail::EpisodePlan plan;
    plan.ep.episode_id = next_episode_id();
    plan.ep.patient_id = pid;
    plan.ep.age_at_admission = std::round(age * 100.0) / 100.0;
    plan.ep.sex = sex;
    if (respiratory) {
      plan.ep.diagnosis_tags.insert("respiratory");
    } else {
      const double r = b.u();
      plan.ep.diagnosis_tags.insert(r < 0.4 ? "cardiac" : r < 0.7 ? "neurologic" : "other");
    }
    plan.ep.disposition = b.favourable();
    return plan;
  };

  // --- trial-producing episodes
  std::size_t trial_cursor = 0;
  for (std::size_t e = 0; e < E; ++e) {
    const std::size_t p = episode_patient[e];
    auto plan = base_episode(patient_id("P", p), patient_age[p], patient_sex[p], b.coin(cfg.respiratory_fraction));
    ManifestEpisode me;
    me.episode_id = plan.ep.episode_id;
    me.patient_id = plan.ep.patient_id;
    const std::size_t n_periods = two_periods[e] ? 2 : 1;
    me.scenarios.push_back(n_periods == 2 ? "reinit_after_24h" : "single_period");

    Minutes cursor = b.minutes(2 * 60, 24 * 60);
    const bool died = b.coin(cfg.mortality_rate);
    if (died) plan.mortality_severity = cfg.signal_strength * (0.7 + 0.6 * b.u());
    for (std::size_t k = 0; k < n_periods; ++k) {
      detail::PeriodPlan pp;
      pp.failure = trial_fails[trial_cursor++];
      const bool last = k + 1 == n_periods;
      pp.in_window_discharge = last && !pp.failure && !died && b.coin(cfg.discharge_in_window_fraction);
      pp.reinit = b.coin(cfg.reinit_within_period_fraction);
      if (k == 0) {
        const double r = b.u();
        pp.stepdown = r < cfg.stepdown_fraction;
        pp.guarded_prefix = !pp.stepdown && r < cfg.stepdown_fraction + cfg.exclusion_fraction;
      }
      auto mp = detail::plan_period(b, plan, cursor, pp, me.scenarios);
      me.periods.push_back(mp);
    }
    if (died) {
      plan.ep.disposition = Disposition::Died;
      me.scenarios.push_back("died_after_window");
    }
    plan.ep.discharge_time = std::round(plan.ep.discharge_time);
    finish(plan, std::move(me));
  }

  // --- non-trial episodes on fresh patients
  std::size_t extra_patient = 0;
  auto extra_plan = [&](bool respiratory) {
    const double age = b.draw_age();
    return base_episode(patient_id("X", extra_patient++), age, b.coin(0.432) ? "F" : "M", respiratory);
  };
  auto count_of = [&](double frac) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(frac * static_cast<double>(E))));
  };

  // Cut short inside the only period.
  const std::array<Disposition, 5> cut_dispositions{Disposition::OperatingRoom, Disposition::AnotherHospitalICU,
                                                    Disposition::AnotherICUCurrentHospital, Disposition::Died,
                                                    Disposition::StillAdmitted};
  const std::size_t n_cut = std::max<std::size_t>(cut_dispositions.size(), count_of(cfg.censoring_fraction));
  for (std::size_t i = 0; i < n_cut; ++i) {
    auto plan = extra_plan(b.coin(cfg.respiratory_fraction));
    ManifestEpisode me;
    me.episode_id = plan.ep.episode_id;
    me.patient_id = plan.ep.patient_id;
    me.scenarios.push_back("single_period");
    Minutes cursor = b.minutes(2 * 60, 24 * 60);
    detail::PeriodPlan pp;
    pp.in_window_discharge = true;
    auto mp = detail::plan_period(b, plan, cursor, pp, me.scenarios);
    me.scenarios.erase(std::remove_if(me.scenarios.begin(), me.scenarios.end(),
                                      [](const std::string& s) { return s == "discharge_in_window" || s == "success"; }),
                       me.scenarios.end());
    const Disposition d = cut_dispositions[i % cut_dispositions.size()];
    plan.ep.disposition = d;
    mp.outcome = Outcome::Censored;
    me.periods.push_back(mp);
    switch (d) {
      case Disposition::OperatingRoom:
        me.included = false;
        me.exclusion = ExclusionReason::OperatingRoomTruncated;
        me.scenarios.push_back("or_truncated");
        break;
      case Disposition::AnotherHospitalICU:
      case Disposition::AnotherICUCurrentHospital:
        me.included = false;
        me.exclusion = ExclusionReason::AmbiguousDisposition;
        me.scenarios.push_back("ambiguous_disposition");
        break;
      case Disposition::Died:
        plan.mortality_severity = cfg.signal_strength * (0.7 + 0.6 * b.u());
        me.scenarios.push_back("censored_died");
        break;
      default:
        me.scenarios.push_back("censored_still_admitted");
        break;
    }
    finish(plan, std::move(me));
  }

  // Rule-based exclusions with an otherwise ordinary single period.
  const std::size_t n_excl = count_of(cfg.exclusion_fraction);
  for (int rule = 0; rule < 3; ++rule) {
    for (std::size_t i = 0; i < n_excl; ++i) {
      auto plan = extra_plan(b.coin(cfg.respiratory_fraction));
      ManifestEpisode me;
      me.episode_id = plan.ep.episode_id;
      me.patient_id = plan.ep.patient_id;
      me.included = false;
      me.scenarios.push_back("single_period");
      if (rule == 0) {
        plan.ep.age_at_admission = std::round(b.uniform(19.0, 25.0) * 100.0) / 100.0;
        me.exclusion = ExclusionReason::Age;
        me.scenarios.push_back("age_excluded");
      } else if (rule == 1) {
        plan.ep.diagnosis_tags.insert("apnea");
        me.exclusion = ExclusionReason::Apnea;
        me.scenarios.push_back("apnea_excluded");
      } else {
        plan.ep.care_flags.insert(b.coin(0.5) ? "DNR" : "DNI");
        me.exclusion = ExclusionReason::CareOrder;
        me.scenarios.push_back("care_order_excluded");
      }
      Minutes cursor = b.minutes(2 * 60, 24 * 60);
      detail::PeriodPlan pp;
      pp.failure = b.coin(cfg.failure_rate);
      me.periods.push_back(detail::plan_period(b, plan, cursor, pp, me.scenarios));
      plan.ep.discharge_time = std::round(plan.ep.discharge_time);
      finish(plan, std::move(me));
    }
  }

  // HFNC only ever started inside the step-down guard: no period at all.
  for (std::size_t i = 0; i < n_excl; ++i) {
    auto plan = extra_plan(b.coin(cfg.respiratory_fraction));
    ManifestEpisode me;
    me.episode_id = plan.ep.episode_id;
    me.patient_id = plan.ep.patient_id;
    me.included = false;
    me.exclusion = ExclusionReason::NoHFNC;
    me.scenarios.push_back("stepdown_guard_blocked");
    Minutes t = b.minutes(0, 6 * 60);
    detail::add_event(plan, t, Modality::Intubation, SupportAction::Start);
    const Minutes down = t + b.minutes(12 * 60, 72 * 60);
    detail::add_event(plan, down, Modality::Intubation, SupportAction::Stop);
    const Minutes h = down + b.minutes(1, 29);
    detail::add_event(plan, h, Modality::HFNC, SupportAction::Start);
    plan.forced_vitals.push_back(h);
    const Minutes h_stop = h + b.minutes(4 * 60, 20 * 60);
    detail::add_event(plan, h_stop, Modality::HFNC, SupportAction::Stop);
    plan.hfnc_on.emplace_back(h, h_stop);
    plan.ep.discharge_time = h_stop + b.minutes(2 * 60, 20 * 60);
    finish(plan, std::move(me));
  }

  // Episodes without HFNC, used only as pretext (mortality) training data.
  for (std::size_t i = 0; i < cfg.n_pretext_episodes; ++i) {
    auto plan = extra_plan(b.coin(0.4));
    ManifestEpisode me;
    me.episode_id = plan.ep.episode_id;
    me.patient_id = plan.ep.patient_id;
    me.included = false;
    me.exclusion = ExclusionReason::NoHFNC;
    me.scenarios.push_back("pretext_only");
    plan.ep.discharge_time = b.minutes(24 * 60, 72 * 60);
    if (b.coin(cfg.pretext_mortality_rate)) {
      plan.ep.disposition = Disposition::Died;
      plan.mortality_severity = cfg.signal_strength * (0.7 + 0.6 * b.u());
    }
    finish(plan, std::move(me));
  }
  return cohort;
}

inline void write_manifest_jsonl(std::ostream& os, const std::vector<ManifestEpisode>& manifest) {
  for (const auto& m : manifest) os << to_json(m).dump() << '\n';
}

}  // namespace hfnc

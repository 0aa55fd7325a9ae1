// Acceptance run: one PASS/FAIL line per criterion, exit 1 if any fails.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>

#include "hfnc/cli.hpp"
#include "hfnc/eval.hpp"
#include "hfnc/synth.hpp"
#include "hfnc/trainer.hpp"

using namespace hfnc;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kGradRelTol = 1e-4;
constexpr double kGradStep = 1e-6;
constexpr double kTrapezoidTol = 1e-12;
constexpr double kEnsembleTol = 1e-12;
constexpr double kSignalFloor = 0.85;
constexpr double kNullHalfWidth = 0.05;
constexpr double kMedianTarget = 7.6, kMedianTol = 1.0;
constexpr double kP80Target = 14.1, kP80Tol = 1.5;
constexpr std::size_t kMinFailures = 500;
constexpr double kLabelingBudgetS = 10, kGradientBudgetS = 30;
constexpr double kSignalBudgetS = 30 * 60, kSmokeBudgetS = 10 * 60;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome_ {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(int id, const char* name, const std::function<Outcome_()>& fn) {
  const auto t0 = Clock::now();
  Outcome_ r;
  try {
    r = fn();
  } catch (const std::exception& e) {
    r = {false, std::string("exception: ") + e.what()};
  }
  if (!r.pass) ++failures;
  std::printf("%s  %2d %-28s %s (%.1fs)\n", r.pass ? "PASS" : "FAIL", id, name, r.detail.c_str(), seconds_since(t0));
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// 1

Outcome_ labeling_oracle() {
  const auto t0 = Clock::now();
  const auto cohort = generate_cohort(SynthConfig{});
  const auto seg = segment_cohort(cohort.episodes);
  std::size_t bad = 0;
  for (std::size_t i = 0; i < cohort.episodes.size(); ++i) {
    const auto& m = cohort.manifest[i];
    const auto& ps = seg.periods.at(m.episode_id);
    if (seg.exclusions[i].included != m.included || seg.exclusions[i].reason != m.exclusion ||
        ps.size() != m.periods.size()) {
      ++bad;
      continue;
    }
    for (std::size_t k = 0; k < ps.size(); ++k) {
      const auto& a = ps[k];
      const auto& b = m.periods[k];
      if (a.start != b.start || a.end != b.end || a.outcome != b.outcome || a.resolution_time != b.resolution_time) {
        ++bad;
        break;
      }
    }
  }
  std::size_t missing = 0;
  for (const auto& s : required_scenarios()) missing += cohort.scenario_counts.count(s) == 0;
  const double t = seconds_since(t0);
  return {bad == 0 && missing == 0 && cohort.episodes.size() >= 500 && t < kLabelingBudgetS,
          fmt("episodes=%zu disagreements=%zu missing_scenarios=%zu t=%.2fs", cohort.episodes.size(), bad, missing, t)};
}

// ---------------------------------------------------------------------------
// 2

Episode course(std::vector<SupportEvent> events) {
  Episode ep;
  ep.episode_id = "e";
  ep.patient_id = "p";
  ep.age_at_admission = 3;
  ep.discharge_time = 20000;
  ep.disposition = Disposition::GeneralCareFloor;
  ep.support_events = std::move(events);
  return ep;
}

Outcome_ segmentation_scenarios() {
  constexpr auto H = Modality::HFNC;
  constexpr auto on = SupportAction::Start;
  constexpr auto off = SupportAction::Stop;
  // stop at 3h, restart one hour later
  const auto a = derive_periods(course({{0, H, on}, {180, H, off}, {240, H, on}, {600, H, off}}));
  const bool same = a.size() == 1 && a[0].start == 0 && a[0].end == 1440;
  // stop at 3h, restart 24h + 1min after the stop
  const auto b = derive_periods(course({{0, H, on}, {180, H, off}, {180 + 1441, H, on}, {2000, H, off}}));
  const bool fresh = b.size() == 2 && b[1].start == 180 + 1441;
  // BiPAP stepped down to HFNC after 20 min
  const auto c = derive_periods(course({{0, Modality::BiPAP, on}, {600, Modality::BiPAP, off}, {620, H, on}}));
  const bool none = c.empty();
  return {same && fresh && none, fmt("reinit+1h_same=%d reinit>24h_new=%d stepdown<30m_none=%d", same, fresh, none)};
}

// ---------------------------------------------------------------------------
// 3

Outcome_ gradient_check() {
  const auto t0 = Clock::now();
  LSTMStack s = init_params(11, 5, {4, 4, 4});
  s.params() *= 2.5;
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n(0, 1);
  Eigen::MatrixXd x(9, 5);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
  const std::vector<double> y{kNaN, 0, 1, kNaN, kNaN, 1, 0, kNaN, 1};
  const double l2 = 1e-3;
  auto loss = [&](const LSTMStack& p) { return bce_masked(forward(p, x).probs, y) + l2 * l2_penalty(p); };
  const auto lg = loss_and_gradient(s, x, y, l2);
  double worst = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    LSTMStack a = s, b = s;
    a.params()(static_cast<Eigen::Index>(i)) += kGradStep;
    b.params()(static_cast<Eigen::Index>(i)) -= kGradStep;
    const double fd = (loss(a) - loss(b)) / (2 * kGradStep);
    const double an = lg.grad(static_cast<Eigen::Index>(i));
    worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}));
  }
  const double t = seconds_since(t0);
  return {worst <= kGradRelTol && t < kGradientBudgetS,
          fmt("params=%zu max_rel_err=%.2e t=%.2fs", s.size(), worst, t)};
}

// ---------------------------------------------------------------------------
// 4

Outcome_ metric_oracles() {
  std::mt19937_64 rng(4);
  std::size_t auroc_bad = 0, op_bad = 0, sets = 0;
  double worst_trap = 0;
  while (sets < 1000) {
    const int n = std::uniform_int_distribution<int>(2, 12)(rng);
    std::vector<double> s;
    std::vector<int> y;
    int pos = 0;
    for (int i = 0; i < n; ++i) {
      s.push_back(std::uniform_int_distribution<int>(0, 6)(rng) / 6.0);
      y.push_back(std::uniform_int_distribution<int>(0, 1)(rng));
      pos += y.back();
    }
    if (pos == 0 || pos == n) continue;
    ++sets;
    const int neg = n - pos;
    // pairwise count in half-units keeps it integral
    long twice = 0;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (y[i] == 1 && y[j] == 0) twice += s[i] > s[j] ? 2 : s[i] == s[j] ? 1 : 0;
      }
    }
    const double brute = static_cast<double>(twice) / (2.0 * pos * neg);
    if (*auroc(s, y) != brute) ++auroc_bad;
    worst_trap = std::max(worst_trap, std::abs(trapezoid_area(roc_curve(s, y)) - brute));

    // exhaustive: every observed score as a threshold, highest first
    std::vector<double> th(s.begin(), s.end());
    std::sort(th.begin(), th.end(), std::greater<>());
    th.erase(std::unique(th.begin(), th.end()), th.end());
    const auto ops = operating_points(s, y);
    const auto& targets = default_sensitivity_targets();
    if (ops.size() != targets.size()) {
      ++op_bad;
      continue;
    }
    for (std::size_t k = 0; k < targets.size(); ++k) {
      for (double t : th) {
        int tp = 0, fp = 0;
        for (int i = 0; i < n; ++i) {
          if (s[i] >= t) (y[i] ? tp : fp)++;
        }
        if (tp * 1.0 / pos < targets[k] - 1e-12) continue;
        const auto& o = ops[k];
        const bool ok = o.threshold == t && o.sensitivity == tp * 1.0 / pos &&
                        std::abs(o.specificity - (neg - fp) * 1.0 / neg) < 1e-15 && o.ppv &&
                        std::abs(*o.ppv - tp * 1.0 / (tp + fp)) < 1e-15;
        if (!ok) ++op_bad;
        break;
      }
    }
  }
  return {auroc_bad == 0 && worst_trap <= kTrapezoidTol && op_bad == 0,
          fmt("sets=%zu auroc_mismatch=%zu max_trapezoid_err=%.1e operating_mismatch=%zu", sets, auroc_bad, worst_trap,
              op_bad)};
}

// ---------------------------------------------------------------------------
// 5

Outcome_ exclusion_at_time() {
  std::vector<EvalTrial> ts{{"fail_4.5h", 1000, 1000 + 270, true, false},
                            {"ok_a", 0, 1440, false, false},
                            {"ok_b", 50, 1490, false, false}};
  std::vector<PredictionSeries> preds{{"fail_4.5h", {1000, 1200}, {0.6, 0.9}},
                                      {"ok_a", {0, 200}, {0.1, 0.3}},
                                      {"ok_b", {50}, {0.2}}};
  const auto idx = index_predictions(preds);
  const auto at5 = scores_at_anchor(ts, idx, 300);
  const auto at4 = scores_at_anchor(ts, idx, 240);
  const bool ok = at5.n_eligible == 2 && at5.n_fail == 0 && at4.n_eligible == 3 && at4.n_fail == 1 &&
                  !auroc(at5.scores, at5.labels) && *auroc(at4.scores, at4.labels) == 1.0;
  return {ok, fmt("5.0h: eligible=%zu fail=%zu; 4.0h: eligible=%zu fail=%zu", at5.n_eligible, at5.n_fail,
                  at4.n_eligible, at4.n_fail)};
}

// ---------------------------------------------------------------------------
// Shared small training cohort for 6-8.

struct Small {
  SyntheticCohort cohort;
  std::vector<HFNCTrial> trials;
  std::map<std::string, Partition> split;
  PreparedCohort prepared;
  PretextData pretext;
  TrainOptions opt;
};

const Small& small() {
  static const Small s = [] {
    Small s;
    SynthConfig c;
    c.n_patients = 60;
    c.n_trials = 80;
    c.n_pretext_episodes = 20;
    c.signal_strength = 0.9;
    c.seed = 606;
    s.cohort = generate_cohort(c);
    s.trials = segment_cohort(s.cohort.episodes).trials;
    s.split = split_cohort(s.trials, {0.5, 0.25, 0.25}, 6);
    s.prepared = prepare_cohort(s.cohort.episodes, s.cohort.catalog, s.trials, s.split);
    s.pretext = pretext_data(s.cohort.episodes, s.prepared, s.split, 72);
    s.opt.hyper.hidden_sizes = {4, 4, 4};
    s.opt.hyper.max_epochs = 1;
    s.opt.pretext_epochs = 1;
    return s;
  }();
  return s;
}

// ---------------------------------------------------------------------------
// 6

Outcome_ ensemble_algebra() {
  const auto& s = small();
  const auto multi = build_multi_ensemble(s.prepared, s.pretext, s.opt, {101, 102, 103, 104}, {1, 2, 3, 4, 5});
  double worst = 0;
  for (const auto& t : s.prepared.trials) {
    const auto e = predict_trial(multi, t, s.prepared.stats).probs;
    std::vector<double> sum(e.size(), 0.0);
    for (const auto& m : multi.members) {
      const auto p = predict_trial(m, t, s.prepared.stats).probs;
      for (std::size_t i = 0; i < p.size(); ++i) sum[i] += p[i];
    }
    for (std::size_t i = 0; i < e.size(); ++i) worst = std::max(worst, std::abs(e[i] - sum[i] / 20.0));
  }
  EnsembleOptions dup;
  dup.allow_duplicate_seeds = true;
  const auto same = build_ensemble("dup", s.prepared, s.pretext, s.opt, {101, 101, 101, 101}, {7, 7, 7, 7, 7}, dup);
  double collapse = 0;
  for (const auto& t : s.prepared.trials) {
    const auto e = predict_trial(same, t, s.prepared.stats).probs;
    const auto one = predict_trial(same.members.front(), t, s.prepared.stats).probs;
    for (std::size_t i = 0; i < e.size(); ++i) collapse = std::max(collapse, std::abs(e[i] - one[i]));
  }
  return {multi.members.size() == 20 && worst <= kEnsembleTol && collapse <= kEnsembleTol,
          fmt("members=%zu max|mean-flat|=%.1e max|equal-seeds-single|=%.1e", multi.members.size(), worst, collapse)};
}

// ---------------------------------------------------------------------------
// 7

Outcome_ transfer_check() {
  const auto& s = small();
  auto opt = s.opt;
  const auto pre = train_pretext(s.pretext, s.prepared.stats, opt.hyper, 2, 101);
  LSTMStack target = init_params(3, s.prepared.stats.dim(), opt.hyper.hidden_sizes, opt.hyper.forget_bias);
  transfer_first_layer(pre, target);
  const std::span<const double> a = pre.stack.layer_block(0);
  const std::span<const double> b = std::as_const(target).layer_block(0);
  const bool l1 = a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
  bool rest_differ = true;
  for (std::size_t l = 1; l < 3; ++l) {
    const auto p = pre.stack.layer_block(l);
    const auto q = std::as_const(target).layer_block(l);
    rest_differ = rest_differ && std::memcmp(p.data(), q.data(), p.size() * sizeof(double)) != 0;
  }
  return {l1 && rest_differ, fmt("layer1_bit_equal=%d layers2-3_differ=%d", l1, rest_differ)};
}

// ---------------------------------------------------------------------------
// 8

Outcome_ perseveration_laws() {
  const auto& s = small();
  auto opt = s.opt;
  opt.hyper.max_epochs = 2;
  opt.perseveration = 1;
  const auto pers1 = train_hfnc_model(ModelKind::LSTMPers, s.prepared, opt, 9);
  const auto plain = train_hfnc_model(ModelKind::LSTM, s.prepared, opt, 9);
  bool k1 = pers1.lstm->params() == plain.lstm->params();
  for (const auto& t : s.prepared.trials) {
    k1 = k1 && predict_trial(pers1, t, s.prepared.stats).probs == predict_trial(plain, t, s.prepared.stats).probs;
  }
  bool k3 = true, recover = true;
  for (const auto& t : s.prepared.trials) {
    const auto x3 = perseverate(t.x, 3);
    const auto y3 = perseverate_labels(t.labels, 3);
    k3 = k3 && x3.rows() == 3 * t.x.rows() && y3.size() == 3 * t.labels.size();
    for (std::size_t i = 0; i < y3.size() && k3; ++i) {
      const bool last = i % 3 == 2;
      const double orig = t.labels[i / 3];
      k3 = last ? (std::isnan(orig) ? std::isnan(y3[i]) : y3[i] == orig) : std::isnan(y3[i]);
    }
    for (std::size_t r = 0; r < t.x.rows(); ++r) {
      recover = recover && x3.values.row(static_cast<Eigen::Index>(3 * r + 2)) == t.x.values.row(static_cast<Eigen::Index>(r)) &&
                x3.times[3 * r + 2] == t.x.times[r];
    }
  }
  return {k1 && k3 && recover, fmt("k1_identical=%d k3_length_and_mask=%d every_3rd_row_recovers=%d", k1, k3, recover)};
}

// ---------------------------------------------------------------------------
// 9

struct SignalRun {
  double lr517 = 0, lstm_tl = 0;
  std::optional<double> lr14, lstm;
};

double test_auroc_2h(const ModelBundle& b, const PreparedCohort& pc) {
  std::vector<EvalTrial> ts;
  for (const auto* t : pc.partition(Partition::Test)) ts.push_back(t->eval);
  const auto preds = predict_partition(b, pc, Partition::Test);
  const auto a = scores_at_anchor(ts, index_predictions(preds), 120);
  return auroc(a.scores, a.labels).value_or(kNaN);
}

SignalRun signal_run(double s, std::size_t n_trials, std::size_t n_patients, const SplitRatios& ratios,
                     std::size_t max_epochs, bool all_models) {
  SynthConfig sc;
  sc.signal_strength = s;
  sc.n_trials = n_trials;
  sc.n_patients = n_patients;
  sc.seed = 909;
  const auto cohort = generate_cohort(sc);
  const auto trials = segment_cohort(cohort.episodes).trials;
  const auto split = split_cohort(trials, ratios, 17);
  const auto pc = prepare_cohort(cohort.episodes, cohort.catalog, trials, split);
  TrainOptions opt;
  opt.hyper.hidden_sizes = {16, 32, 16};
  opt.hyper.max_epochs = max_epochs;
  opt.pretext_epochs = 10;
  const auto pd = pretext_data(cohort.episodes, pc, split, opt.pretext_max_hours);
  const auto pre = train_pretext(pd, pc.stats, opt.hyper, opt.pretext_epochs, 101);
  SignalRun r;
  r.lr517 = test_auroc_2h(train_hfnc_model(ModelKind::LR517, pc, opt, 1), pc);
  r.lstm_tl = test_auroc_2h(train_hfnc_model(ModelKind::LSTMTL, pc, opt, 1, &pre), pc);
  if (all_models) {
    r.lr14 = test_auroc_2h(train_hfnc_model(ModelKind::LR14, pc, opt, 1), pc);
    r.lstm = test_auroc_2h(train_hfnc_model(ModelKind::LSTM, pc, opt, 1), pc);
  }
  return r;
}

bool near_half(double a) { return std::abs(a - 0.5) <= kNullHalfWidth; }

Outcome_ signal_recovery() {
  const auto t0 = Clock::now();
  const auto strong = signal_run(0.9, 800, 611, kDefaultSplitRatios, 100, false);
  const bool strong_ok = strong.lr517 >= kSignalFloor && strong.lstm_tl >= kSignalFloor;
  // a larger held-out set keeps sampling noise of the null AUROC well inside the band
  const auto null = signal_run(0.0, 4000, 3055, {0.25, 0.15, 0.60}, 30, true);
  const bool null_ok = near_half(null.lr517) && near_half(null.lstm_tl) && near_half(*null.lr14) && near_half(*null.lstm);
  const double t_signal = seconds_since(t0);

  // full-size network end to end on a 50-trial cohort
  const auto t1 = Clock::now();
  SynthConfig sc;
  sc.n_trials = 50;
  sc.n_patients = 40;
  sc.n_pretext_episodes = 20;
  sc.seed = 31;
  const auto cohort = generate_cohort(sc);
  const auto trials = segment_cohort(cohort.episodes).trials;
  const auto split = split_cohort(trials, {0.5, 0.25, 0.25}, 17);
  const auto pc = prepare_cohort(cohort.episodes, cohort.catalog, trials, split);
  TrainOptions opt;
  opt.hyper.max_epochs = 3;
  opt.pretext_epochs = 2;
  const auto pd = pretext_data(cohort.episodes, pc, split, opt.pretext_max_hours);
  const auto pre = train_pretext(pd, pc.stats, opt.hyper, opt.pretext_epochs, 101);
  const auto full = train_hfnc_model(ModelKind::LSTMPersTL, pc, opt, 1, &pre);
  const bool smoke_ok = full.lstm->layer(1).hidden == 256 && full.history.objective.size() == 3;
  const double t_smoke = seconds_since(t1);

  return {strong_ok && null_ok && smoke_ok && t_signal < kSignalBudgetS && t_smoke < kSmokeBudgetS,
          fmt("s=0.9: LR517=%.3f LSTM+TL=%.3f | s=0: LR14=%.3f LR517=%.3f LSTM=%.3f LSTM+TL=%.3f | "
              "signal_t=%.0fs full-size smoke t=%.0fs",
              strong.lr517, strong.lstm_tl, *null.lr14, null.lr517, *null.lstm, null.lstm_tl, t_signal, t_smoke)};
}

// ---------------------------------------------------------------------------
// 10

Outcome_ schedule_behavior() {
  PlateauSchedule s(TrainHyper{});
  std::vector<double> lrs;
  std::size_t epochs = 0, reductions = 0;
  double first_reduced = 0;
  // improve once, then flat forever
  for (;;) {
    ++epochs;
    const auto d = s.update(epochs == 1 ? 0.7 : 0.6);
    if (d.reduced && ++reductions == 1) first_reduced = s.lr();
    if (d.stop) break;
    if (epochs > 1000) break;
  }
  const bool ok = std::abs(first_reduced - 8.64e-4) <= 1e-15 && reductions == 8 && epochs == 1 + 9 * 10 &&
                  s.state().reductions_used == 8;
  return {ok, fmt("lr_after_first=%.4g reductions=%zu stopped_at_epoch=%zu", first_reduced, reductions, epochs)};
}

// ---------------------------------------------------------------------------
// 11

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

int hfnc_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "hfnc");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream err;
  const int rc = cli::run(static_cast<int>(argv.size()), argv.data(), err);
  if (rc != 0) std::fprintf(stderr, "%s", err.str().c_str());
  return rc;
}

Outcome_ determinism() {
  const fs::path root = fs::temp_directory_path() / "hfnc_acceptance_det";
  fs::remove_all(root);
  const std::string data = (root / "data").string();
  if (hfnc_cli({"synth", "--out", data, "--trials", "60", "--patients", "48", "--seed", "3"}) != 0 ||
      hfnc_cli({"segment", "--data", data}) != 0) {
    return {false, "setup failed"};
  }
  std::ofstream(root / "cfg.json") << R"({"hidden_sizes": [6, 6, 6], "max_epochs": 2, "pretext_epochs": 2,
    "finetune_seeds": [1, 2], "pretext_seeds": [101, 102]})";
  const std::string cfg = (root / "cfg.json").string();
  std::size_t compared = 0, differ = 0;
  auto twice = [&](std::vector<std::string> args, const std::vector<std::string>& files) {
    for (const char* tag : {"a", "b"}) {
      auto a = args;
      a.insert(a.end(), {"--config", cfg, "--data", data, "--out", (root / tag).string()});
      if (hfnc_cli(a) != 0) return false;
    }
    for (const auto& f : files) {
      ++compared;
      differ += slurp(root / "a" / f) != slurp(root / "b" / f) || slurp(root / "a" / f).empty();
    }
    fs::remove_all(root / "a");
    fs::remove_all(root / "b");
    return true;
  };
  const std::vector<std::string> single{"checkpoints/model.json", "predictions/predictions.jsonl"};
  bool ran = twice({"train", "--kind", "LR517"}, single) && twice({"train", "--kind", "LSTM+3xPers"}, single) &&
             twice({"train", "--kind", "LSTM+3xPers+TL"},
                   {"checkpoints/model.json", "checkpoints/pretext.json", "predictions/predictions.jsonl"});
  // ensemble command fixes its own sizes; use two seeds through the library path instead
  const auto& s = small();
  EnsembleOptions eo;
  const auto e1 = build_ensemble("x", s.prepared, s.pretext, s.opt, {101}, {1, 2}, eo);
  const auto e2 = build_ensemble("x", s.prepared, s.pretext, s.opt, {101}, {1, 2}, eo);
  ++compared;
  differ += to_json(e1).dump() != to_json(e2).dump();
  fs::remove_all(root);
  return {ran && differ == 0, fmt("artifacts_compared=%zu differing=%zu", compared, differ)};
}

// ---------------------------------------------------------------------------
// 12

Outcome_ synthetic_calibration() {
  SynthConfig sc;
  // default settings, three times the cohort so at least 500 failures resolve
  sc.n_trials *= 3;
  sc.n_patients *= 3;
  const auto cohort = generate_cohort(sc);
  std::vector<EvalTrial> ts;
  for (const auto& t : segment_cohort(cohort.episodes).trials) ts.push_back(eval_trial(t));
  const auto ttf = time_to_failure_stats(ts);
  const bool ok = ttf.hours.size() >= kMinFailures && ttf.median && ttf.p80 &&
                  std::abs(*ttf.median - kMedianTarget) <= kMedianTol && std::abs(*ttf.p80 - kP80Target) <= kP80Tol;
  return {ok, fmt("failures=%zu median=%.2fh p80=%.2fh", ttf.hours.size(), ttf.median.value_or(kNaN),
                  ttf.p80.value_or(kNaN))};
}

}  // namespace

int main() {
  criterion(1, "labeling-oracle", labeling_oracle);
  criterion(2, "segmentation-scenarios", segmentation_scenarios);
  criterion(3, "gradient-correctness", gradient_check);
  criterion(4, "metric-oracles", metric_oracles);
  criterion(5, "exclusion-at-time", exclusion_at_time);
  criterion(6, "ensemble-algebra", ensemble_algebra);
  criterion(7, "transfer-check", transfer_check);
  criterion(8, "perseveration-laws", perseveration_laws);
  criterion(9, "signal-recovery", signal_recovery);
  criterion(10, "schedule-behavior", schedule_behavior);
  criterion(11, "determinism", determinism);
  criterion(12, "synthetic-calibration", synthetic_calibration);
  std::printf("%s: %d of 12 criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}

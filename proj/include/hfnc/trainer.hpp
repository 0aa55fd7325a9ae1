#pragma once

// Model training: cohort preparation, mortality pretext models, first-layer
// transfer, HFNC fine-tuning with validation-driven checkpointing, the two
// logistic baselines, and seed ensembles.

#include <atomic>
#include <algorithm>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "hfnc/baselines.hpp"
#include "hfnc/catalog.hpp"
#include "hfnc/eval.hpp"
#include "hfnc/neural.hpp"
#include "hfnc/preprocess.hpp"
#include "hfnc/trial_engine.hpp"

namespace hfnc {

// ---------------------------------------------------------------------------
// Model kinds

enum class ModelKind { LR14, LR517, LSTM, LSTMPers, LSTMTL, LSTMPersTL };

inline const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::LR14: return "LR14";
    case ModelKind::LR517: return "LR517";
    case ModelKind::LSTM: return "LSTM";
    case ModelKind::LSTMPers: return "LSTM+3xPers";
    case ModelKind::LSTMTL: return "LSTM+TL";
    case ModelKind::LSTMPersTL: return "LSTM+3xPers+TL";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  for (auto k : {ModelKind::LR14, ModelKind::LR517, ModelKind::LSTM, ModelKind::LSTMPers, ModelKind::LSTMTL,
                 ModelKind::LSTMPersTL}) {
    if (s == to_string(k)) return k;
  }
  if (s == "LR-14") return ModelKind::LR14;
  if (s == "LR-517") return ModelKind::LR517;
  fail("unknown model kind '", s, "'");
}

inline bool is_lstm(ModelKind k) { return k != ModelKind::LR14 && k != ModelKind::LR517; }
inline bool uses_transfer(ModelKind k) { return k == ModelKind::LSTMTL || k == ModelKind::LSTMPersTL; }
inline bool uses_perseveration(ModelKind k) { return k == ModelKind::LSTMPers || k == ModelKind::LSTMPersTL; }

// ---------------------------------------------------------------------------
// Prepared cohort: one design matrix and label vector per trial

struct PreparedTrial {
  std::string episode_id;
  std::string patient_id;
  Partition partition = Partition::Training;
  EvalTrial eval;
  DesignMatrix x;
  std::vector<double> labels;  // aligned with x rows
};

struct PreparedCohort {
  Catalog catalog;  // after rare-therapy pruning
  std::vector<std::string> pruned;
  NormStats stats;
  std::vector<PreparedTrial> trials;

  std::vector<const PreparedTrial*> partition(Partition p) const {
    std::vector<const PreparedTrial*> out;
    for (const auto& t : trials) {
      if (t.partition == p) out.push_back(&t);
    }
    return out;
  }

  std::vector<EvalTrial> eval_trials(Partition p) const {
    std::vector<EvalTrial> out;
    for (const auto& t : trials) {
      if (t.partition == p) out.push_back(t.eval);
    }
    return out;
  }
};

/// Design matrix and labels for one trial slice; rows are the label-series
/// times (admission through resolution).
inline PreparedTrial prepare_trial(const Episode& ep, const HFNCTrial& trial, const Catalog& catalog,
                                   const NormStats& stats, Partition part = Partition::Test) {
  PreparedTrial pt;
  pt.episode_id = trial.episode_id;
  pt.patient_id = trial.patient_id;
  pt.partition = part;
  pt.eval = eval_trial(trial);
  auto filtered = aggregate_and_filter(ep.records, catalog);
  pt.x = build_design_matrix(ep, filtered.records, trial.label_series.times, stats);
  pt.labels = trial.label_series.labels;
  return pt;
}

/// Latest slice end per training episode, so statistics see only data that
/// some training trial can see.
inline std::map<std::string, Minutes> training_horizons(const std::vector<HFNCTrial>& trials,
                                                        const std::map<std::string, Partition>& split) {
  std::map<std::string, Minutes> out;
  for (const auto& t : trials) {
    if (split.at(t.patient_id) != Partition::Training) continue;
    auto [it, inserted] = out.emplace(t.episode_id, t.slice_end);
    if (!inserted) it->second = std::max(it->second, t.slice_end);
  }
  return out;
}

inline PreparedCohort prepare_cohort(const std::vector<Episode>& episodes, const Catalog& catalog,
                                     const std::vector<HFNCTrial>& trials,
                                     const std::map<std::string, Partition>& split) {
  std::map<std::string, const Episode*> by_id;
  for (const auto& e : episodes) by_id.emplace(e.episode_id, &e);
  auto episode_of = [&](const std::string& id) -> const Episode& {
    auto it = by_id.find(id);
    if (it == by_id.end()) fail("trial references unknown episode '", id, "'");
    return *it->second;
  };
  for (const auto& t : trials) {
    if (!split.count(t.patient_id)) fail("patient '", t.patient_id, "' has no partition");
  }

  const auto horizons = training_horizons(trials, split);
  if (horizons.empty()) fail("training partition is empty");
  std::vector<const Episode*> train_eps;
  for (const auto& [id, _] : horizons) train_eps.push_back(&episode_of(id));

  PreparedCohort pc;
  auto check = validate_catalog(catalog, therapy_prevalence(train_eps));
  if (!check.ok()) fail("catalog invalid: ", check.errors.front());
  pc.catalog = *check.catalog;
  pc.pruned = check.removed;

  std::vector<TrainingEpisode> training;
  for (const auto& [id, horizon] : horizons) {
    const Episode& ep = episode_of(id);
    TrainingEpisode te{&ep, {}};
    for (auto& r : aggregate_and_filter(ep.records, pc.catalog).records) {
      if (r.time <= horizon) te.records.push_back(std::move(r));
    }
    training.push_back(std::move(te));
  }
  pc.stats = fit_normalization(training, pc.catalog);

  for (const auto& t : trials) {
    pc.trials.push_back(prepare_trial(episode_of(t.episode_id), t, pc.catalog, pc.stats, split.at(t.patient_id)));
  }
  for (Partition p : {Partition::Training, Partition::Validation}) {
    if (pc.partition(p).empty()) fail(to_string(p), " partition is empty");
  }
  return pc;
}

// ---------------------------------------------------------------------------
// Sequences and LSTM inference

struct Sequence {
  RowMatrix x;
  std::vector<double> labels;
};

inline Sequence make_sequence(const DesignMatrix& x, const std::vector<double>& labels, std::size_t k) {
  if (labels.size() != x.rows()) fail("labels do not match design-matrix rows");
  return {perseverate(x, k).values, perseverate_labels(labels, k)};
}

/// Per-original-row probabilities for a (possibly perseverated) LSTM.
inline std::vector<double> lstm_predict(const LSTMStack& stack, const DesignMatrix& x, std::size_t k) {
  if (x.rows() == 0) return {};
  const RowMatrix in = k == 1 ? x.values : perseverate(x, k).values;
  return collapse_perseverated(forward(stack, in).probs, k);
}

// ---------------------------------------------------------------------------
// Training history and bundles

struct TrainHistory {
  std::vector<double> objective;  // validation objective per epoch
  std::vector<double> train_loss;
  std::size_t best_epoch = 0;     // 1-based; 0 if none
  double best_objective = 0;
  bool stopped_by_schedule = false;
};

inline json to_json(const TrainHistory& h) {
  return json{{"objective", h.objective},
              {"train_loss", h.train_loss},
              {"best_epoch", h.best_epoch},
              {"best_objective", h.best_objective},
              {"stopped_by_schedule", h.stopped_by_schedule}};
}

inline TrainHistory train_history_from_json(const json& j) {
  TrainHistory h;
  h.objective = j.at("objective").get<std::vector<double>>();
  h.train_loss = j.at("train_loss").get<std::vector<double>>();
  h.best_epoch = j.at("best_epoch").get<std::size_t>();
  h.best_objective = j.at("best_objective").get<double>();
  h.stopped_by_schedule = j.at("stopped_by_schedule").get<bool>();
  return h;
}

inline json to_json(const TrainHyper& h) {
  return json{{"batch_size", h.batch_size},
              {"initial_lr", h.initial_lr},
              {"patience", h.patience},
              {"reduce_rate", h.reduce_rate},
              {"max_reductions", h.max_reductions},
              {"dropout", h.dropout},
              {"recurrent_dropout", h.recurrent_dropout},
              {"l2", h.l2},
              {"hidden_sizes", h.hidden_sizes},
              {"rmsprop_rho", h.rmsprop_rho},
              {"rmsprop_eps", h.rmsprop_eps},
              {"forget_bias", h.forget_bias},
              {"max_epochs", h.max_epochs},
              {"freeze_transferred", h.freeze_transferred}};
}

inline TrainHyper train_hyper_from_json(const json& j) {
  TrainHyper h;
  h.batch_size = j.at("batch_size").get<std::size_t>();
  h.initial_lr = j.at("initial_lr").get<double>();
  h.patience = j.at("patience").get<std::size_t>();
  h.reduce_rate = j.at("reduce_rate").get<double>();
  h.max_reductions = j.at("max_reductions").get<std::size_t>();
  h.dropout = j.at("dropout").get<double>();
  h.recurrent_dropout = j.at("recurrent_dropout").get<double>();
  h.l2 = j.at("l2").get<double>();
  h.hidden_sizes = j.at("hidden_sizes").get<std::vector<std::size_t>>();
  h.rmsprop_rho = j.at("rmsprop_rho").get<double>();
  h.rmsprop_eps = j.at("rmsprop_eps").get<double>();
  h.forget_bias = j.at("forget_bias").get<double>();
  h.max_epochs = j.at("max_epochs").get<std::size_t>();
  h.freeze_transferred = j.at("freeze_transferred").get<bool>();
  return h;
}

inline json stack_to_json(const LSTMStack& s) {
  std::vector<double> p(s.params().data(), s.params().data() + s.params().size());
  return json{{"input_dim", s.input_dim()}, {"hidden_sizes", s.hidden_sizes()}, {"params", p}};
}

inline LSTMStack stack_from_json(const json& j) {
  LSTMStack s(j.at("input_dim").get<std::size_t>(), j.at("hidden_sizes").get<std::vector<std::size_t>>());
  const auto p = j.at("params").get<std::vector<double>>();
  if (p.size() != s.size()) fail("checkpoint: expected ", s.size(), " parameters, found ", p.size());
  for (std::size_t i = 0; i < p.size(); ++i) s.params()(static_cast<Eigen::Index>(i)) = p[i];
  return s;
}

/// Mortality model whose first layer seeds the TL kinds.
struct PretextCheckpoint {
  std::uint64_t seed = 0;
  std::string norm_stats_hash;
  std::size_t epochs = 0;
  double train_auroc = 0;
  LSTMStack stack;
};

inline json to_json(const PretextCheckpoint& c) {
  return json{{"format", "hfnc-pretext"}, {"version", 1},         {"seed", c.seed},
              {"norm_stats_hash", c.norm_stats_hash}, {"epochs", c.epochs}, {"train_auroc", c.train_auroc},
              {"lstm", stack_to_json(c.stack)}};
}

inline PretextCheckpoint pretext_from_json(const json& j) {
  if (j.value("format", "") != "hfnc-pretext") fail("not a pretext checkpoint");
  PretextCheckpoint c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.norm_stats_hash = j.at("norm_stats_hash").get<std::string>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.train_auroc = j.at("train_auroc").get<double>();
  c.stack = stack_from_json(j.at("lstm"));
  return c;
}

struct ModelBundle {
  ModelKind kind = ModelKind::LSTM;
  std::string catalog_hash;
  NormStats stats;
  std::size_t perseveration = 1;
  std::optional<std::uint64_t> pretext_seed;
  std::uint64_t finetune_seed = 0;
  TrainHyper hyper;
  std::optional<LSTMStack> lstm;
  std::optional<ElasticNetModel> logreg;
  TrainHistory history;

  std::string norm_stats_hash() const { return hfnc::norm_stats_hash(stats); }
};

inline json to_json(const ModelBundle& b) {
  json j{{"format", "hfnc-model"},
         {"version", 1},
         {"kind", to_string(b.kind)},
         {"catalog_hash", b.catalog_hash},
         {"norm_stats_hash", b.norm_stats_hash()},
         {"norm_stats", to_json(b.stats)},
         {"perseveration", b.perseveration},
         {"seeds", {{"pretext", b.pretext_seed ? json(*b.pretext_seed) : json(nullptr)}, {"finetune", b.finetune_seed}}},
         {"hyper", to_json(b.hyper)},
         {"history", to_json(b.history)}};
  if (b.lstm) j["lstm"] = stack_to_json(*b.lstm);
  if (b.logreg) {
    const auto& m = *b.logreg;
    j["logreg"] = {{"subset", m.subset},
                   {"features", m.features},
                   {"columns", m.columns},
                   {"weights", std::vector<double>(m.weights.data(), m.weights.data() + m.weights.size())},
                   {"intercept", m.intercept},
                   {"lambda", m.lambda},
                   {"alpha", m.alpha},
                   {"iterations", m.iterations},
                   {"converged", m.converged},
                   {"warnings", m.warnings}};
  }
  return j;
}

inline ModelBundle bundle_from_json(const json& j) {
  if (j.value("format", "") != "hfnc-model") fail("not a model checkpoint");
  if (j.value("version", 0) != 1) fail("unsupported model checkpoint version");
  ModelBundle b;
  b.kind = parse_model_kind(j.at("kind").get<std::string>());
  b.catalog_hash = j.at("catalog_hash").get<std::string>();
  b.stats = norm_stats_from_json(j.at("norm_stats"));
  if (b.norm_stats_hash() != j.at("norm_stats_hash").get<std::string>()) fail("checkpoint: normalization hash mismatch");
  b.perseveration = j.at("perseveration").get<std::size_t>();
  if (b.perseveration < 1) fail("checkpoint: perseveration must be >= 1");
  const auto& seeds = j.at("seeds");
  if (!seeds.at("pretext").is_null()) b.pretext_seed = seeds.at("pretext").get<std::uint64_t>();
  b.finetune_seed = seeds.at("finetune").get<std::uint64_t>();
  b.hyper = train_hyper_from_json(j.at("hyper"));
  b.history = train_history_from_json(j.at("history"));
  if (j.contains("lstm")) b.lstm = stack_from_json(j.at("lstm"));
  if (j.contains("logreg")) {
    const auto& l = j.at("logreg");
    ElasticNetModel m;
    m.subset = l.at("subset").get<std::string>();
    m.features = l.at("features").get<std::vector<std::string>>();
    m.columns = l.at("columns").get<std::vector<std::size_t>>();
    const auto w = l.at("weights").get<std::vector<double>>();
    m.weights = Eigen::Map<const VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
    m.intercept = l.at("intercept").get<double>();
    m.lambda = l.at("lambda").get<double>();
    m.alpha = l.at("alpha").get<double>();
    m.iterations = l.at("iterations").get<std::size_t>();
    m.converged = l.at("converged").get<bool>();
    m.warnings = l.at("warnings").get<std::vector<std::string>>();
    b.logreg = std::move(m);
  }
  if (is_lstm(b.kind) != b.lstm.has_value() || is_lstm(b.kind) == b.logreg.has_value()) {
    fail("checkpoint: parameters do not match model kind ", to_string(b.kind));
  }
  if (uses_transfer(b.kind) && !b.pretext_seed) fail("checkpoint: TL model without pretext lineage");
  return b;
}

// ---------------------------------------------------------------------------
// Prediction

/// One probability per design-matrix row. The trial must have been prepared
/// with the bundle's own statistics.
inline PredictionSeries predict_trial(const ModelBundle& b, const PreparedTrial& t, const NormStats& used_stats) {
  if (norm_stats_hash(used_stats) != b.norm_stats_hash()) {
    fail("predict: trial was preprocessed with different normalization statistics than model ", to_string(b.kind));
  }
  PredictionSeries s;
  s.trial_id = t.eval.trial_id;
  s.times = t.x.times;
  if (b.lstm) {
    s.probs = lstm_predict(*b.lstm, t.x, b.perseveration);
  } else {
    s.probs = predict_logreg_rows(*b.logreg, t.x.values);
  }
  return s;
}

struct EnsembleSpec {
  std::string name;
  std::vector<ModelBundle> members;
};

/// Arithmetic mean of member outputs, taken as m0 + mean(mi - m0) so that
/// identical members reproduce the member output exactly.
inline std::vector<double> mean_of_members(const std::vector<std::vector<double>>& outs) {
  if (outs.empty()) fail("ensemble: no members");
  std::vector<double> mean = outs.front();
  const double n = static_cast<double>(outs.size());
  for (std::size_t i = 0; i < mean.size(); ++i) {
    double d = 0;
    for (const auto& o : outs) {
      if (o.size() != mean.size()) fail("ensemble: member outputs differ in length");
      d += o[i] - outs.front()[i];
    }
    mean[i] = outs.front()[i] + d / n;
  }
  return mean;
}

inline void check_ensemble(const EnsembleSpec& e) {
  if (e.members.size() < 2) fail("ensemble needs at least 2 members");
  for (const auto& m : e.members) {
    if (m.catalog_hash != e.members.front().catalog_hash || m.norm_stats_hash() != e.members.front().norm_stats_hash()) {
      fail("ensemble members must share catalog and normalization statistics");
    }
  }
}

inline PredictionSeries predict_trial(const EnsembleSpec& e, const PreparedTrial& t, const NormStats& used_stats) {
  check_ensemble(e);
  std::vector<std::vector<double>> outs;
  PredictionSeries s;
  for (const auto& m : e.members) {
    auto p = predict_trial(m, t, used_stats);
    if (outs.empty()) {
      s.trial_id = p.trial_id;
      s.times = p.times;
    }
    outs.push_back(std::move(p.probs));
  }
  s.probs = mean_of_members(outs);
  return s;
}

inline json to_json(const EnsembleSpec& e) {
  json members = json::array();
  for (const auto& m : e.members) members.push_back(to_json(m));
  return json{{"format", "hfnc-ensemble"}, {"version", 1}, {"name", e.name}, {"rule", "mean"}, {"members", members}};
}

inline EnsembleSpec ensemble_from_json(const json& j) {
  if (j.value("format", "") != "hfnc-ensemble") fail("not an ensemble checkpoint");
  EnsembleSpec e;
  e.name = j.at("name").get<std::string>();
  for (const auto& m : j.at("members")) e.members.push_back(bundle_from_json(m));
  check_ensemble(e);
  return e;
}

inline void write_predictions_jsonl(std::ostream& os, const std::vector<PredictionSeries>& preds) {
  for (const auto& p : preds) {
    for (std::size_t i = 0; i < p.times.size(); ++i) {
      os << json{{"trial_id", p.trial_id}, {"time", p.times[i]}, {"probability", p.probs[i]}}.dump() << '\n';
    }
  }
}

inline std::vector<PredictionSeries> read_predictions_jsonl(std::istream& in) {
  std::vector<PredictionSeries> out;
  std::map<std::string, std::size_t> index;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& ex) {
      fail("predictions line ", lineno, ": ", ex.what());
    }
    const auto id = j.at("trial_id").get<std::string>();
    auto [it, inserted] = index.emplace(id, out.size());
    if (inserted) out.push_back({id, {}, {}});
    auto& s = out[it->second];
    const double t = j.at("time").get<double>();
    const double p = j.at("probability").get<double>();
    if (!s.times.empty() && !(t > s.times.back())) fail("predictions line ", lineno, ": times must ascend per trial");
    if (!(p >= 0 && p <= 1)) fail("predictions line ", lineno, ": probability outside [0,1]");
    s.times.push_back(t);
    s.probs.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training options

struct TrainOptions {
  TrainHyper hyper;
  std::size_t perseveration = 3;  // used by the +3xPers kinds
  std::size_t pretext_epochs = 30;
  double pretext_max_hours = 72;
  ElasticNetParams lr14 = kLr14Params;
  ElasticNetParams lr517 = kLr517Params;
  std::vector<std::string> lr14_features = default_lr14_features();
  StalenessRule staleness = StalenessRule::LastAtOrBefore;
};

namespace detail {

/// Average masked BCE over all labeled steps of the batch (+ L2) and its
/// gradient. Returns the data loss.
inline double batch_gradient(const LSTMStack& stack, const std::vector<const Sequence*>& batch,
                             const std::vector<std::uint64_t>& seq_ids, std::uint64_t dropout_seed,
                             std::uint64_t epoch, const TrainHyper& h, VectorXd& grad) {
  std::size_t n = 0;
  for (const Sequence* s : batch) n += count_labels(s->labels);
  grad.setZero(stack.params().size());
  if (n == 0) return 0;
  const double w = 1.0 / static_cast<double>(n);
  double loss = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Sequence& s = *batch[i];
    const std::size_t ni = count_labels(s.labels);
    if (ni == 0) continue;
    auto masks = make_dropout_masks(dropout_seed, epoch, seq_ids[i], stack, h.dropout, h.recurrent_dropout);
    auto cache = forward(stack, s.x, &masks);
    loss += bce_masked(cache.probs, s.labels) * static_cast<double>(ni) * w;
    backward(stack, cache, s.labels, w, grad);
  }
  grad += 2.0 * h.l2 * stack.params().cwiseProduct(stack.weight_mask());
  return loss;
}

/// One pass over `train` in a seeded order.
inline double run_epoch(LSTMStack& stack, const std::vector<Sequence>& train, std::uint64_t seed, std::uint64_t epoch,
                        const TrainHyper& h, RmsPropState& opt, double lr, const VectorXd* frozen) {
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix_seed({seed, epoch, 0xBA7C4ULL}));
  seeded_shuffle(order, rng);
  const std::uint64_t dropout_seed = mix_seed({seed, 0xD80ULL});
  VectorXd grad;
  double loss = 0;
  std::size_t batches = 0;
  for (std::size_t at = 0; at < order.size(); at += h.batch_size) {
    std::vector<const Sequence*> batch;
    std::vector<std::uint64_t> ids;
    for (std::size_t i = at; i < std::min(order.size(), at + h.batch_size); ++i) {
      batch.push_back(&train[order[i]]);
      ids.push_back(order[i]);
    }
    loss += batch_gradient(stack, batch, ids, dropout_seed, epoch, h, grad);
    rmsprop_step(stack.params(), grad, opt, lr, frozen);
    ++batches;
  }
  if (!stack.all_finite()) fail("training diverged: non-finite parameters");
  return batches ? loss / static_cast<double>(batches) : 0.0;
}

inline void check_hyper(const TrainHyper& h) {
  if (h.batch_size == 0) fail("batch_size must be positive");
  if (h.hidden_sizes.empty()) fail("hidden_sizes must not be empty");
  if (h.max_epochs == 0) fail("max_epochs must be positive");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Pretext (mortality) training

/// Whole-episode sequences labeled at every step with in-hospital death.
struct PretextData {
  std::vector<Sequence> sequences;
  std::size_t n_died = 0;
};

/// Episodes of patients outside validation/test (including episodes that
/// produced no HFNC trial), truncated at `max_hours`.
inline PretextData pretext_data(const std::vector<Episode>& episodes, const PreparedCohort& cohort,
                                const std::map<std::string, Partition>& split, double max_hours) {
  PretextData d;
  for (const auto& ep : episodes) {
    auto it = split.find(ep.patient_id);
    if (it != split.end() && it->second != Partition::Training) continue;
    const Minutes until = std::min(ep.discharge_time, max_hours * kMinutesPerHour);
    auto times = charting_times(ep, until);
    if (times.empty()) continue;
    auto filtered = aggregate_and_filter(ep.records, cohort.catalog);
    Sequence s;
    s.x = build_design_matrix(ep, filtered.records, times, cohort.stats).values;
    s.labels.assign(times.size(), ep.died() ? 1.0 : 0.0);
    d.n_died += ep.died() ? 1 : 0;
    d.sequences.push_back(std::move(s));
  }
  return d;
}

inline PretextCheckpoint train_pretext(const PretextData& data, const NormStats& stats, const TrainHyper& hyper,
                                       std::size_t epochs, std::uint64_t seed) {
  detail::check_hyper(hyper);
  if (data.sequences.empty()) fail("pretext: no episodes");
  if (data.n_died == 0 || data.n_died == data.sequences.size()) fail("pretext: mortality labels are single-class");
  PretextCheckpoint c;
  c.seed = seed;
  c.norm_stats_hash = norm_stats_hash(stats);
  c.epochs = epochs;
  c.stack = init_params(seed, stats.dim(), hyper.hidden_sizes, hyper.forget_bias);
  RmsPropState opt{{}, hyper.rmsprop_rho, hyper.rmsprop_eps};
  for (std::size_t e = 1; e <= epochs; ++e) {
    detail::run_epoch(c.stack, data.sequences, seed, e, hyper, opt, hyper.initial_lr, nullptr);
  }
  // Training AUROC over every labeled step, as a recoverability check.
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& s : data.sequences) {
    auto probs = forward(c.stack, s.x).probs;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      scores.push_back(probs[i]);
      labels.push_back(s.labels[i] != 0 ? 1 : 0);
    }
  }
  c.train_auroc = auroc(scores, labels).value_or(0.5);
  return c;
}

/// Copies layer 1 of the pretext model into `target` bit for bit.
inline void transfer_first_layer(const PretextCheckpoint& pretext, LSTMStack& target) {
  const auto& a = pretext.stack.layer(0);
  const auto& b = target.layer(0);
  if (a.in != b.in || a.hidden != b.hidden) {
    fail("transfer: pretext layer 1 is ", a.in, "->", a.hidden, " but target layer 1 is ", b.in, "->", b.hidden);
  }
  auto src = pretext.stack.layer_block(0);
  auto dst = target.layer_block(0);
  std::copy(src.begin(), src.end(), dst.begin());
}

// ---------------------------------------------------------------------------
// HFNC model training

inline std::vector<PredictionSeries> predict_partition(const ModelBundle& b, const PreparedCohort& c, Partition p) {
  std::vector<PredictionSeries> out;
  for (const PreparedTrial* t : c.partition(p)) out.push_back(predict_trial(b, *t, c.stats));
  return out;
}

inline std::optional<double> partition_objective(const ModelBundle& b, const PreparedCohort& c, Partition p) {
  auto preds = predict_partition(b, c, p);
  auto trials = c.eval_trials(p);
  return validation_objective(trials, index_predictions(preds));
}

/// Trains one model of the given kind. TL kinds need a pretext checkpoint.
/// LSTM kinds keep the parameters of the epoch with the best validation
/// objective.
inline ModelBundle train_hfnc_model(ModelKind kind, const PreparedCohort& cohort, const TrainOptions& opt,
                                    std::uint64_t finetune_seed, const PretextCheckpoint* pretext = nullptr) {
  ModelBundle b;
  b.kind = kind;
  b.catalog_hash = catalog_hash(cohort.catalog);
  b.stats = cohort.stats;
  b.finetune_seed = finetune_seed;
  b.hyper = opt.hyper;
  const auto train = cohort.partition(Partition::Training);
  const auto val = cohort.partition(Partition::Validation);
  if (train.empty() || val.empty()) fail("train: training and validation partitions must be non-empty");

  if (!is_lstm(kind)) {
    const bool lr14 = kind == ModelKind::LR14;
    const auto& params = lr14 ? opt.lr14 : opt.lr517;
    std::vector<std::size_t> cols;
    std::vector<std::string> names;
    if (lr14) {
      names = opt.lr14_features;
      cols = select_columns(cohort.stats, names);
    } else {
      names = cohort.stats.names();
      for (std::size_t i = 0; i < names.size(); ++i) cols.push_back(i);
    }
    std::size_t n_rows = 0;
    for (const auto* t : train) n_rows += count_labels(t->labels);
    RowMatrix rows(static_cast<Eigen::Index>(n_rows), static_cast<Eigen::Index>(cols.size()));
    std::vector<double> y;
    y.reserve(n_rows);
    Eigen::Index r = 0;
    for (const auto* t : train) {
      for (std::size_t i = 0; i < t->labels.size(); ++i) {
        if (!is_label(t->labels[i])) continue;
        for (std::size_t j = 0; j < cols.size(); ++j) {
          rows(r, static_cast<Eigen::Index>(j)) = t->x.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(cols[j]));
        }
        y.push_back(t->labels[i]);
        ++r;
      }
    }
    auto m = fit_elasticnet_logreg(rows, y, params);
    m.subset = lr14 ? "lr14" : "full";
    m.features = names;
    m.columns = cols;
    b.logreg = std::move(m);
    if (auto v = partition_objective(b, cohort, Partition::Validation)) {
      b.history.objective.push_back(*v);
      b.history.best_epoch = 1;
      b.history.best_objective = *v;
    }
    return b;
  }

  const TrainHyper& h = opt.hyper;
  detail::check_hyper(h);
  b.perseveration = uses_perseveration(kind) ? opt.perseveration : 1;
  if (b.perseveration < 1) fail("perseveration must be >= 1");

  LSTMStack stack = init_params(finetune_seed, cohort.stats.dim(), h.hidden_sizes, h.forget_bias);
  std::optional<VectorXd> frozen;
  if (uses_transfer(kind)) {
    if (!pretext) fail("model kind ", to_string(kind), " needs a pretext checkpoint");
    if (pretext->norm_stats_hash != norm_stats_hash(cohort.stats)) {
      fail("pretext checkpoint was trained with different normalization statistics");
    }
    transfer_first_layer(*pretext, stack);
    b.pretext_seed = pretext->seed;
    if (h.freeze_transferred) {
      frozen = VectorXd::Zero(static_cast<Eigen::Index>(stack.size()));
      const auto& l0 = stack.layer(0);
      frozen->segment(static_cast<Eigen::Index>(l0.begin()), static_cast<Eigen::Index>(l0.end() - l0.begin())).setOnes();
    }
  }

  std::vector<Sequence> seqs;
  for (const auto* t : train) seqs.push_back(make_sequence(t->x, t->labels, b.perseveration));

  PlateauSchedule sched(h);
  RmsPropState rms{{}, h.rmsprop_rho, h.rmsprop_eps};
  VectorXd best = stack.params();
  for (std::size_t epoch = 1; epoch <= h.max_epochs; ++epoch) {
    const double loss = detail::run_epoch(stack, seqs, finetune_seed, epoch, h, rms, sched.lr(), frozen ? &*frozen : nullptr);
    b.lstm = stack;
    auto obj = partition_objective(b, cohort, Partition::Validation);
    if (!obj) fail("validation objective undefined: no hourly anchor has both outcome classes");
    b.history.train_loss.push_back(loss);
    b.history.objective.push_back(*obj);
    const auto d = sched.update(*obj);
    if (d.improved) {
      best = stack.params();
      b.history.best_epoch = epoch;
      b.history.best_objective = *obj;
    }
    if (d.stop) {
      b.history.stopped_by_schedule = true;
      break;
    }
  }
  stack.params() = best;
  b.lstm = std::move(stack);
  return b;
}

// ---------------------------------------------------------------------------
// Ensembles

/// Runs jobs[0..n) on up to `workers` threads; results are placed by index,
/// so the outcome does not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

inline void check_distinct(const std::vector<std::uint64_t>& seeds, const char* what) {
  std::set<std::uint64_t> s(seeds.begin(), seeds.end());
  if (s.size() != seeds.size()) fail("duplicate ", what, " seeds");
}

struct EnsembleOptions {
  std::size_t workers = 1;
  bool allow_duplicate_seeds = false;  // test mode
  ModelKind member_kind = ModelKind::LSTMPersTL;
};

/// Members for every (pretext, fine-tune) seed pair, pretext-major order.
inline EnsembleSpec build_ensemble(const std::string& name, const PreparedCohort& cohort, const PretextData& pretext_set,
                                   const TrainOptions& opt, const std::vector<std::uint64_t>& pretext_seeds,
                                   const std::vector<std::uint64_t>& finetune_seeds, const EnsembleOptions& eo) {
  if (!eo.allow_duplicate_seeds) {
    check_distinct(pretext_seeds, "pretext");
    check_distinct(finetune_seeds, "fine-tune");
  }
  if (pretext_seeds.empty() || finetune_seeds.empty() || pretext_seeds.size() * finetune_seeds.size() < 2) {
    fail("ensemble needs at least 2 members");
  }
  if (!uses_transfer(eo.member_kind)) fail("ensemble members must be a transfer-learning kind");
  std::vector<PretextCheckpoint> pretexts(pretext_seeds.size());
  parallel_for(pretext_seeds.size(), eo.workers, [&](std::size_t i) {
    pretexts[i] = train_pretext(pretext_set, cohort.stats, opt.hyper, opt.pretext_epochs, pretext_seeds[i]);
  });
  EnsembleSpec e;
  e.name = name;
  e.members.resize(pretext_seeds.size() * finetune_seeds.size());
  parallel_for(e.members.size(), eo.workers, [&](std::size_t i) {
    const std::size_t a = i / finetune_seeds.size();
    const std::size_t s = i % finetune_seeds.size();
    e.members[i] = train_hfnc_model(eo.member_kind, cohort, opt, finetune_seeds[s], &pretexts[a]);
  });
  check_ensemble(e);
  return e;
}

inline EnsembleSpec build_simple_ensemble(const PreparedCohort& cohort, const PretextData& pretext_set,
                                          const TrainOptions& opt, std::uint64_t pretext_seed,
                                          const std::vector<std::uint64_t>& finetune_seeds,
                                          const EnsembleOptions& eo = {}) {
  if (!eo.allow_duplicate_seeds && finetune_seeds.size() != 5) fail("simple ensemble uses 5 fine-tune seeds");
  return build_ensemble("Simple-EN", cohort, pretext_set, opt, {pretext_seed}, finetune_seeds, eo);
}

inline EnsembleSpec build_multi_ensemble(const PreparedCohort& cohort, const PretextData& pretext_set,
                                         const TrainOptions& opt, const std::vector<std::uint64_t>& pretext_seeds,
                                         const std::vector<std::uint64_t>& finetune_seeds,
                                         const EnsembleOptions& eo = {}) {
  if (!eo.allow_duplicate_seeds && (pretext_seeds.size() != 4 || finetune_seeds.size() != 5)) {
    fail("multi ensemble uses 4 pretext seeds x 5 fine-tune seeds");
  }
  return build_ensemble("Multi-EN", cohort, pretext_set, opt, pretext_seeds, finetune_seeds, eo);
}

}  // namespace hfnc

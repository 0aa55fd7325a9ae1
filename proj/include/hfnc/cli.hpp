#pragma once

// The `hfnc` command line: synth, segment, train, ensemble, predict,
// evaluate, report. Every command writes one run_manifest.json into its
// output directory.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hfnc/catalog.hpp"
#include "hfnc/config.hpp"
#include "hfnc/eval.hpp"
#include "hfnc/synth.hpp"
#include "hfnc/trainer.hpp"
#include "hfnc/trial_engine.hpp"

namespace hfnc::cli {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// File helpers

inline std::ifstream open_in(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail("cannot open '", p.string(), "'");
  return in;
}

inline json read_json(const fs::path& p) {
  auto in = open_in(p);
  try {
    return json::parse(in);
  } catch (const json::exception& ex) {
    fail("'", p.string(), "': ", ex.what());
  }
}

class Artifacts {
 public:
  explicit Artifacts(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

  const fs::path& dir() const { return dir_; }

  void write(const std::string& rel, const std::string& content) {
    const fs::path p = dir_ / rel;
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) fail("cannot write '", p.string(), "'");
    out << content;
    if (!out) fail("write failed for '", p.string(), "'");
    paths_.push_back(rel);
  }

  template <typename Fn>
  void write_with(const std::string& rel, Fn&& fn) {
    std::ostringstream os;
    fn(os);
    write(rel, os.str());
  }

  void manifest(const std::string& command, const json& extra) {
    json m = extra;
    m["tool_version"] = kToolVersion;
    m["command"] = command;
    m["artifacts"] = paths_;
    std::ofstream out(dir_ / "run_manifest.json", std::ios::binary | std::ios::trunc);
    if (!out) fail("cannot write run manifest in '", dir_.string(), "'");
    out << m.dump(2) << '\n';
  }

 private:
  fs::path dir_;
  std::vector<std::string> paths_;
};

// ---------------------------------------------------------------------------
// Data directory: catalog.json, observations.csv, metadata.jsonl

struct Dataset {
  Catalog catalog;
  std::vector<Episode> episodes;
  std::size_t parse_diagnostics = 0;
};

inline fs::path data_dir_or_env(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("HFNC_DATA_DIR")) return env;
  fail("no data directory: pass --data or set HFNC_DATA_DIR");
}

inline Dataset load_dataset(const fs::path& dir) {
  Dataset d;
  d.catalog = catalog_from_json(read_json(dir / "catalog.json"));
  auto check = validate_catalog(d.catalog);
  if (!check.ok()) fail("catalog: ", check.errors.front());
  auto obs_in = open_in(dir / "observations.csv");
  auto parsed = parse_observation_stream(obs_in, d.catalog);
  for (const auto& diag : parsed.diagnostics) {
    std::cerr << "observations.csv:" << diag.line << ": " << diag.message << '\n';
  }
  d.parse_diagnostics = parsed.diagnostics.size();
  auto meta_in = open_in(dir / "metadata.jsonl");
  d.episodes = assemble_episodes(parsed.records, read_metadata_jsonl(meta_in));
  return d;
}

// ---------------------------------------------------------------------------
// Segments directory: trials.jsonl + exclusions.csv

inline std::vector<TrialManifestEntry> read_trials(const fs::path& dir) {
  auto in = open_in(dir / "trials.jsonl");
  std::vector<TrialManifestEntry> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(trial_entry_from_json(json::parse(line)));
  }
  return out;
}

inline std::map<std::string, Partition> split_from_entries(const std::vector<TrialManifestEntry>& entries) {
  std::map<std::string, Partition> split;
  for (const auto& e : entries) split[e.patient_id] = e.partition;
  return split;
}

/// Re-derives trials from the data and checks them against the segments file.
inline std::vector<HFNCTrial> trials_matching(const Dataset& d, const std::vector<TrialManifestEntry>& entries,
                                              const RunConfig& cfg) {
  auto seg = segment_cohort(d.episodes, cfg.outcome_rules());
  if (seg.trials.size() != entries.size()) {
    fail("segments do not match data: ", entries.size(), " trials on file, ", seg.trials.size(), " derived");
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& t = seg.trials[i];
    const auto& e = entries[i];
    if (t.trial_id != e.trial_id || t.target_period.start != e.period_start ||
        t.target_period.resolution_time != e.resolution_time || t.target_period.outcome != e.outcome) {
      fail("segments do not match data at trial '", e.trial_id, "'");
    }
  }
  return seg.trials;
}

inline std::vector<EvalTrial> eval_trials_of(const std::vector<TrialManifestEntry>& entries,
                                             std::optional<Partition> only) {
  std::vector<EvalTrial> out;
  for (const auto& e : entries) {
    if (!only || e.partition == *only) out.push_back(eval_trial(e));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands

struct Common {
  std::string config_path;
  std::string data;
  std::string segments;
  std::string out;
};

inline RunConfig config_of(const Common& c) { return c.config_path.empty() ? RunConfig{} : load_run_config(c.config_path); }

inline json seeds_json(const RunConfig& cfg) {
  return json{{"finetune_seed", cfg.finetune_seed},
              {"pretext_seed", cfg.pretext_seed},
              {"finetune_seeds", cfg.finetune_seeds},
              {"pretext_seeds", cfg.pretext_seeds},
              {"split_seed", cfg.split_seed}};
}

inline void cmd_synth(const std::string& config_path, const std::string& out_dir, std::optional<std::uint64_t> seed,
                      std::optional<double> signal, std::optional<std::size_t> trials,
                      std::optional<std::size_t> patients) {
  SynthConfig sc = config_path.empty() ? SynthConfig{} : synth_config_from_json(read_json(config_path));
  if (seed) sc.seed = *seed;
  if (signal) sc.signal_strength = *signal;
  if (trials) sc.n_trials = *trials;
  if (patients) sc.n_patients = *patients;
  auto cohort = generate_cohort(sc);
  Artifacts a(data_dir_or_env(out_dir));
  a.write("catalog.json", to_json(cohort.catalog).dump(2) + "\n");
  a.write_with("observations.csv", [&](std::ostream& os) { write_observations_csv(os, cohort.all_records()); });
  a.write_with("metadata.jsonl", [&](std::ostream& os) { write_metadata_jsonl(os, cohort.episodes); });
  a.write_with("manifest.jsonl", [&](std::ostream& os) { write_manifest_jsonl(os, cohort.manifest); });
  const json effective = to_json(sc);
  a.manifest("synth", {{"config_hash", hex64(fnv1a64(effective.dump()))},
                       {"catalog_hash", catalog_hash(cohort.catalog)},
                       {"seeds", {{"synth_seed", sc.seed}}},
                       {"effective_config", effective},
                       {"scenario_counts", cohort.scenario_counts}});
}

inline void cmd_segment(const Common& c) {
  const RunConfig cfg = config_of(c);
  const Dataset d = load_dataset(data_dir_or_env(c.data));
  auto seg = segment_cohort(d.episodes, cfg.outcome_rules());
  if (seg.trials.empty()) fail("segment: no trials in cohort");
  auto split = split_cohort(seg.trials, cfg.split_ratios, cfg.split_seed);
  Artifacts a(c.out.empty() ? data_dir_or_env(c.data) / "segments" : fs::path(c.out));
  a.write_with("trials.jsonl", [&](std::ostream& os) {
    for (const auto& t : seg.trials) {
      TrialManifestEntry e{t.episode_id, t.patient_id, t.trial_id, t.target_period.start, t.target_period.end,
                           t.target_period.outcome, t.target_period.resolution_time, split.at(t.patient_id), t.respiratory};
      os << to_json(e).dump() << '\n';
    }
  });
  a.write_with("exclusions.csv", [&](std::ostream& os) { write_exclusions_csv(os, seg.exclusions); });
  a.write_with("periods.jsonl", [&](std::ostream& os) {
    for (const auto& ep : d.episodes) {
      for (const auto& p : seg.periods.at(ep.episode_id)) {
        os << json{{"episode_id", p.episode_id}, {"start", p.start}, {"end", p.end},
                   {"outcome", to_string(p.outcome)}, {"resolution_time", p.resolution_time}}.dump()
           << '\n';
      }
    }
  });
  a.manifest("segment", {{"config_hash", config_hash(cfg)},
                         {"catalog_hash", catalog_hash(d.catalog)},
                         {"seeds", {{"split_seed", cfg.split_seed}}},
                         {"effective_config", to_json(cfg)},
                         {"n_trials", seg.trials.size()}});
}

struct Loaded {
  RunConfig cfg;
  Dataset data;
  std::vector<TrialManifestEntry> entries;
  std::vector<HFNCTrial> trials;
  std::map<std::string, Partition> split;
};

inline Loaded load_for_training(const Common& c) {
  Loaded l;
  l.cfg = config_of(c);
  const fs::path data = data_dir_or_env(c.data);
  l.data = load_dataset(data);
  l.entries = read_trials(c.segments.empty() ? data / "segments" : fs::path(c.segments));
  l.trials = trials_matching(l.data, l.entries, l.cfg);
  l.split = split_from_entries(l.entries);
  return l;
}

inline fs::path run_dir(const Common& c, const std::string& hash) {
  if (!c.out.empty()) return c.out;
  return data_dir_or_env(c.data) / "runs" / hash;
}

inline std::vector<PredictionSeries> predict_all(const PreparedCohort& pc,
                                                 const std::function<PredictionSeries(const PreparedTrial&)>& fn) {
  std::vector<PredictionSeries> out;
  for (const auto& t : pc.trials) out.push_back(fn(t));
  return out;
}

inline void cmd_train(const Common& c, const std::string& kind_flag, const std::string& pretext_path) {
  Loaded l = load_for_training(c);
  if (!kind_flag.empty()) l.cfg.kind = parse_model_kind(kind_flag);
  if (!pretext_path.empty()) l.cfg.tl_source = pretext_path;
  const auto pc = prepare_cohort(l.data.episodes, l.data.catalog, l.trials, l.split);
  const std::string hash = config_hash(l.cfg);
  Artifacts a(run_dir(c, hash));

  std::optional<PretextCheckpoint> pretext;
  if (uses_transfer(l.cfg.kind)) {
    if (!l.cfg.tl_source.empty()) {
      pretext = pretext_from_json(read_json(l.cfg.tl_source));
    } else {
      auto pd = pretext_data(l.data.episodes, pc, l.split, l.cfg.train.pretext_max_hours);
      pretext = train_pretext(pd, pc.stats, l.cfg.train.hyper, l.cfg.train.pretext_epochs, l.cfg.pretext_seed);
      a.write("checkpoints/pretext.json", to_json(*pretext).dump() + "\n");
    }
  }
  auto bundle = train_hfnc_model(l.cfg.kind, pc, l.cfg.train, l.cfg.finetune_seed, pretext ? &*pretext : nullptr);
  a.write("checkpoints/model.json", to_json(bundle).dump() + "\n");
  a.write("norm_stats.json", to_json(pc.stats).dump(2) + "\n");
  auto preds = predict_all(pc, [&](const PreparedTrial& t) { return predict_trial(bundle, t, pc.stats); });
  a.write_with("predictions/predictions.jsonl", [&](std::ostream& os) { write_predictions_jsonl(os, preds); });
  a.manifest("train", {{"config_hash", hash},
                       {"catalog_hash", catalog_hash(pc.catalog)},
                       {"norm_stats_hash", norm_stats_hash(pc.stats)},
                       {"model", to_string(l.cfg.kind)},
                       {"seeds", seeds_json(l.cfg)},
                       {"effective_config", to_json(l.cfg)},
                       {"pruned_variables", pc.pruned},
                       {"best_epoch", bundle.history.best_epoch},
                       {"best_validation_objective", bundle.history.best_objective}});
}

inline void cmd_ensemble(const Common& c, const std::string& type) {
  Loaded l = load_for_training(c);
  if (!type.empty()) l.cfg.ensemble = type;
  if (l.cfg.ensemble != "simple" && l.cfg.ensemble != "multi") fail("ensemble: --type must be simple or multi");
  const auto pc = prepare_cohort(l.data.episodes, l.data.catalog, l.trials, l.split);
  const std::string hash = config_hash(l.cfg);
  Artifacts a(run_dir(c, hash));
  auto pd = pretext_data(l.data.episodes, pc, l.split, l.cfg.train.pretext_max_hours);
  EnsembleOptions eo;
  eo.workers = l.cfg.workers;
  auto e = l.cfg.ensemble == "simple"
               ? build_simple_ensemble(pc, pd, l.cfg.train, l.cfg.pretext_seed, l.cfg.finetune_seeds, eo)
               : build_multi_ensemble(pc, pd, l.cfg.train, l.cfg.pretext_seeds, l.cfg.finetune_seeds, eo);
  a.write("checkpoints/ensemble.json", to_json(e).dump() + "\n");
  auto preds = predict_all(pc, [&](const PreparedTrial& t) { return predict_trial(e, t, pc.stats); });
  a.write_with("predictions/predictions.jsonl", [&](std::ostream& os) { write_predictions_jsonl(os, preds); });
  a.manifest("ensemble", {{"config_hash", hash},
                          {"catalog_hash", catalog_hash(pc.catalog)},
                          {"norm_stats_hash", norm_stats_hash(pc.stats)},
                          {"model", e.name},
                          {"members", e.members.size()},
                          {"seeds", seeds_json(l.cfg)},
                          {"effective_config", to_json(l.cfg)}});
}

inline void cmd_predict(const Common& c, const std::string& model_path) {
  Loaded l = load_for_training(c);
  const json j = read_json(model_path);
  const bool is_ensemble = j.value("format", "") == "hfnc-ensemble";
  std::optional<EnsembleSpec> ens;
  std::optional<ModelBundle> single;
  if (is_ensemble) {
    ens = ensemble_from_json(j);
  } else {
    single = bundle_from_json(j);
  }
  const ModelBundle& ref = is_ensemble ? ens->members.front() : *single;
  std::vector<PredictionSeries> preds;
  for (const auto& t : l.trials) {
    const Episode* ep = nullptr;
    for (const auto& e : l.data.episodes) {
      if (e.episode_id == t.episode_id) ep = &e;
    }
    auto pt = prepare_trial(*ep, t, l.data.catalog, ref.stats, l.split.at(t.patient_id));
    preds.push_back(is_ensemble ? predict_trial(*ens, pt, ref.stats) : predict_trial(*single, pt, ref.stats));
  }
  Artifacts a(c.out.empty() ? fs::path(model_path).parent_path().parent_path() / "predictions" : fs::path(c.out));
  a.write_with("predictions.jsonl", [&](std::ostream& os) { write_predictions_jsonl(os, preds); });
  a.manifest("predict", {{"config_hash", config_hash(l.cfg)},
                         {"catalog_hash", catalog_hash(l.data.catalog)},
                         {"norm_stats_hash", ref.norm_stats_hash()},
                         {"model_path", model_path},
                         {"seeds", seeds_json(l.cfg)}});
}

/// Parses "2h", "90m", "120" (minutes) or "1.5h".
inline Minutes parse_anchor(const std::string& s) {
  if (s.empty()) fail("empty anchor");
  double scale = 1.0;
  std::string num = s;
  if (s.back() == 'h') {
    scale = kMinutesPerHour;
    num.pop_back();
  } else if (s.back() == 'm') {
    num.pop_back();
  }
  auto v = parse_number(num);
  if (!v || *v < 0 || *v * scale > kPeriodLength) fail("anchor '", s, "' must be a time in [0, 24h]");
  return *v * scale;
}

struct EvalOutputs {
  std::vector<SweepRow> sweep;
  std::optional<std::vector<RocPoint>> roc;
  std::optional<std::vector<OperatingPoint>> operating;
  TimeToFailure ttf;
};

inline EvalOutputs evaluate(const std::vector<EvalTrial>& trials, const std::vector<PredictionSeries>& preds,
                            Minutes anchor, CohortFilter filter, StalenessRule rule) {
  EvalOutputs o;
  const auto idx = index_predictions(preds);
  o.sweep = horizon_sweep(trials, idx, 30.0, kPeriodLength, filter, rule);
  const auto cohort = filter_cohort(trials, filter);
  auto a = scores_at_anchor(cohort, idx, anchor, rule);
  if (auroc(a.scores, a.labels)) {
    o.roc = roc_curve(a.scores, a.labels);
    o.operating = operating_points(a.scores, a.labels);
  }
  o.ttf = time_to_failure_stats(cohort);
  return o;
}

inline std::string anchor_tag(Minutes anchor) { return format_number(anchor); }

inline void cmd_evaluate(const Common& c, const std::string& predictions, const std::string& anchor_s,
                         const std::string& cohort_s, const std::string& partition_s) {
  const RunConfig cfg = config_of(c);
  if (c.segments.empty()) fail("evaluate: --segments is required");
  const auto entries = read_trials(c.segments);
  std::optional<Partition> part;
  if (partition_s != "all") part = parse_partition(partition_s);
  CohortFilter filter;
  if (cohort_s == "all") {
    filter = CohortFilter::All;
  } else if (cohort_s == "respiratory") {
    filter = CohortFilter::Respiratory;
  } else {
    fail("--cohort must be all or respiratory");
  }
  const Minutes anchor = parse_anchor(anchor_s);
  auto in = open_in(predictions);
  const auto preds = read_predictions_jsonl(in);
  const auto trials = eval_trials_of(entries, part);
  auto o = evaluate(trials, preds, anchor, filter, cfg.train.staleness);

  Artifacts a(c.out.empty() ? fs::path(predictions).parent_path().parent_path() / "reports" : fs::path(c.out));
  a.write_with("auroc_sweep.csv", [&](std::ostream& os) { write_sweep_csv(os, o.sweep); });
  const std::string tag = anchor_tag(anchor);
  if (o.roc) {
    a.write_with("roc_" + tag + ".csv", [&](std::ostream& os) { write_roc_csv(os, *o.roc); });
    a.write_with("operating_" + tag + ".csv", [&](std::ostream& os) { write_operating_csv(os, *o.operating); });
  } else {
    std::cerr << "evaluate: AUROC undefined at anchor " << tag << " min (single class); ROC not written\n";
  }
  a.write_with("ttf.csv", [&](std::ostream& os) { write_ttf_csv(os, o.ttf); });
  a.manifest("evaluate", {{"config_hash", config_hash(cfg)},
                          {"predictions", predictions},
                          {"anchor_min", anchor},
                          {"cohort", cohort_s},
                          {"partition", partition_s},
                          {"seeds", seeds_json(cfg)}});
}

/// Figure/table-shaped outputs across several runs.
inline void cmd_report(const Common& c, const std::vector<std::string>& runs, const std::string& anchor_s) {
  const RunConfig cfg = config_of(c);
  if (c.segments.empty()) fail("report: --segments is required");
  if (runs.empty()) fail("report: pass at least one --run directory");
  const auto entries = read_trials(c.segments);
  const auto test = eval_trials_of(entries, Partition::Test);
  const Minutes anchor = parse_anchor(anchor_s);
  Artifacts a(c.out.empty() ? fs::path("report") : fs::path(c.out));

  struct RunResult {
    std::string name;
    EvalOutputs all, resp;
  };
  std::vector<RunResult> results;
  for (const auto& r : runs) {
    const json m = read_json(fs::path(r) / "run_manifest.json");
    auto in = open_in(fs::path(r) / "predictions" / "predictions.jsonl");
    const auto preds = read_predictions_jsonl(in);
    results.push_back({m.value("model", fs::path(r).filename().string()),
                       evaluate(test, preds, anchor, CohortFilter::All, cfg.train.staleness),
                       evaluate(test, preds, anchor, CohortFilter::Respiratory, cfg.train.staleness)});
  }

  auto sweep_table = [&](bool resp) {
    std::ostringstream os;
    os << "t_min";
    for (const auto& r : results) os << ',' << r.name;
    os << '\n';
    const auto& first = resp ? results.front().resp.sweep : results.front().all.sweep;
    for (std::size_t i = 0; i < first.size(); ++i) {
      os << format_number(first[i].t);
      for (const auto& r : results) {
        const auto& row = (resp ? r.resp.sweep : r.all.sweep)[i];
        os << ',' << (row.auroc ? format_number(*row.auroc) : "");
      }
      os << '\n';
    }
    return os.str();
  };
  a.write("auroc_by_model.csv", sweep_table(false));
  a.write("auroc_by_model_respiratory.csv", sweep_table(true));
  const std::string tag = anchor_tag(anchor);
  json figures{{"anchor_min", anchor}, {"models", json::array()}};
  for (const auto& r : results) {
    json entry{{"name", r.name}};
    json sweep = json::array();
    for (const auto& row : r.all.sweep) sweep.push_back({row.t, row.auroc ? json(*row.auroc) : json(nullptr)});
    entry["sweep_all"] = sweep;
    sweep = json::array();
    for (const auto& row : r.resp.sweep) sweep.push_back({row.t, row.auroc ? json(*row.auroc) : json(nullptr)});
    entry["sweep_respiratory"] = sweep;
    if (r.all.roc) {
      json roc = json::array();
      for (const auto& p : *r.all.roc) roc.push_back({p.fpr, p.tpr});
      entry["roc"] = roc;
      a.write_with("operating_" + tag + "_" + r.name + ".csv",
                   [&](std::ostream& os) { write_operating_csv(os, *r.all.operating); });
    }
    figures["models"].push_back(entry);
  }
  const auto ttf = time_to_failure_stats(test);
  a.write_with("ttf.csv", [&](std::ostream& os) { write_ttf_csv(os, ttf); });
  json hist = json::array();
  for (const auto& b : ttf.histogram) hist.push_back({{"bin", b.lower_hours}, {"count", b.count}, {"cdf", b.cdf}});
  figures["ttf"] = {{"median_hours", ttf.median ? json(*ttf.median) : json(nullptr)},
                    {"p80_hours", ttf.p80 ? json(*ttf.p80) : json(nullptr)},
                    {"histogram", hist}};
  a.write("figures.json", figures.dump(2) + "\n");
  a.manifest("report", {{"config_hash", config_hash(cfg)}, {"runs", runs}, {"seeds", seeds_json(cfg)}});
}

// ---------------------------------------------------------------------------
// Entry point

/// Returns the process exit code: 0 ok, 1 validation/usage error, 2 internal.
inline int run(int argc, const char* const* argv, std::ostream& err = std::cerr) {
  CLI::App app{"HFNC failure prediction pipeline", "hfnc"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub, bool segments, bool data = true) {
    sub->add_option("--config", common.config_path, "Run configuration JSON");
    if (data) sub->add_option("--data", common.data, "Data directory (default: $HFNC_DATA_DIR)");
    if (segments) sub->add_option("--segments", common.segments, "Segments directory (trials.jsonl)");
    sub->add_option("--out", common.out, "Output directory");
  };

  std::string synth_config, synth_out;
  std::optional<std::uint64_t> synth_seed;
  std::optional<double> synth_signal;
  std::optional<std::size_t> synth_trials, synth_patients;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic cohort");
  synth->add_option("--config", synth_config, "Generator configuration JSON");
  synth->add_option("--out", synth_out, "Output data directory (default: $HFNC_DATA_DIR)");
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--signal", synth_signal, "Planted signal strength in [0,1]");
  synth->add_option("--trials", synth_trials, "Number of HFNC trials");
  synth->add_option("--patients", synth_patients, "Number of patients with trials");

  auto* segment = app.add_subcommand("segment", "Derive trials, exclusions and the patient split");
  add_common(segment, false);

  std::string kind, pretext_path;
  auto* train = app.add_subcommand("train", "Train one model");
  add_common(train, true);
  train->add_option("--kind", kind, "LR14 | LR517 | LSTM | LSTM+3xPers | LSTM+TL | LSTM+3xPers+TL");
  train->add_option("--pretext", pretext_path, "Pretext checkpoint for TL kinds (trained if absent)");

  std::string ens_type;
  auto* ensemble = app.add_subcommand("ensemble", "Train a seed ensemble of LSTM+3xPers+TL models");
  add_common(ensemble, true);
  ensemble->add_option("--type", ens_type, "simple | multi");

  std::string model_path;
  auto* predict = app.add_subcommand("predict", "Predict every trial with a saved model or ensemble");
  add_common(predict, true);
  predict->add_option("--model", model_path, "Model or ensemble checkpoint")->required();

  std::string predictions, anchor = "2h", cohort = "all", partition = "test";
  auto* evaluate_cmd = app.add_subcommand("evaluate", "AUROC sweep, ROC, operating points, time to failure");
  add_common(evaluate_cmd, true, false);
  evaluate_cmd->add_option("--predictions", predictions, "predictions.jsonl")->required();
  evaluate_cmd->add_option("--anchor", anchor, "Anchor time, e.g. 2h or 120");
  evaluate_cmd->add_option("--cohort", cohort, "all | respiratory");
  evaluate_cmd->add_option("--partition", partition, "training | validation | test | all");

  std::vector<std::string> runs;
  auto* report = app.add_subcommand("report", "Compare runs: AUROC tables, ROC data, time to failure");
  add_common(report, true, false);
  report->add_option("--run", runs, "Run directory (repeatable)");
  report->add_option("--anchor", anchor, "Anchor time for ROC/operating tables");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::ostringstream os;
    app.exit(e, os, err);
    std::cout << os.str();
    return 0;
  } catch (const CLI::CallForVersion&) {
    std::cout << kToolVersion << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*synth) cmd_synth(synth_config, synth_out, synth_seed, synth_signal, synth_trials, synth_patients);
    if (*segment) cmd_segment(common);
    if (*train) cmd_train(common, kind, pretext_path);
    if (*ensemble) cmd_ensemble(common, ens_type);
    if (*predict) cmd_predict(common, model_path);
    if (*evaluate_cmd) cmd_evaluate(common, predictions, anchor, cohort, partition);
    if (*report) cmd_report(common, runs, anchor);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const json::exception& e) {
    err << "error: malformed JSON input: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace hfnc::cli

#pragma once

// Run configuration: one flat JSON object. Missing keys take the reference
// defaults; unknown keys and out-of-range values are rejected by name.

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "hfnc/catalog.hpp"
#include "hfnc/common.hpp"
#include "hfnc/trainer.hpp"
#include "hfnc/trial_engine.hpp"

namespace hfnc {

struct RunConfig {
  ModelKind kind = ModelKind::LSTMPersTL;
  std::string ensemble = "none";  // none | simple | multi
  std::uint64_t finetune_seed = 1;
  std::uint64_t pretext_seed = 101;
  std::vector<std::uint64_t> finetune_seeds{1, 2, 3, 4, 5};
  std::vector<std::uint64_t> pretext_seeds{101, 102, 103, 104};
  std::uint64_t split_seed = 17;
  SplitRatios split_ratios = kDefaultSplitRatios;
  TrainOptions train;
  std::string tl_source;  // optional pretext checkpoint path
  Outcome died_in_window = Outcome::Censored;
  Outcome still_admitted_in_window = Outcome::Censored;
  std::size_t workers = 1;

  OutcomeRules outcome_rules() const { return {died_in_window, still_admitted_in_window}; }
};

inline json to_json(const RunConfig& c) {
  const auto& h = c.train.hyper;
  return json{{"kind", to_string(c.kind)},
              {"ensemble", c.ensemble},
              {"finetune_seed", c.finetune_seed},
              {"pretext_seed", c.pretext_seed},
              {"finetune_seeds", c.finetune_seeds},
              {"pretext_seeds", c.pretext_seeds},
              {"split_seed", c.split_seed},
              {"split_ratios", c.split_ratios},
              {"batch_size", h.batch_size},
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
              {"freeze_transferred", h.freeze_transferred},
              {"perseveration", c.train.perseveration},
              {"pretext_epochs", c.train.pretext_epochs},
              {"pretext_max_hours", c.train.pretext_max_hours},
              {"lr14_lambda", c.train.lr14.lambda},
              {"lr14_alpha", c.train.lr14.alpha},
              {"lr517_lambda", c.train.lr517.lambda},
              {"lr517_alpha", c.train.lr517.alpha},
              {"lr_tolerance", c.train.lr517.tolerance},
              {"lr_max_iterations", c.train.lr517.max_iterations},
              {"lr14_features", c.train.lr14_features},
              {"staleness", c.train.staleness == StalenessRule::LastAtOrBefore ? "last" : "nearest15"},
              {"tl_source", c.tl_source},
              {"died_in_window", to_string(c.died_in_window)},
              {"still_admitted_in_window", to_string(c.still_admitted_in_window)},
              {"workers", c.workers}};
}

namespace detail {

template <typename T>
T field(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& ex) {
    fail("config field '", key, "': ", ex.what());
  }
}

inline void require(bool ok, const char* key, const char* what) {
  if (!ok) fail("config field '", key, "': ", what);
}

}  // namespace detail

inline RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) fail("config must be a JSON object");
  const RunConfig defaults;
  json merged = to_json(defaults);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!merged.contains(it.key())) fail("config field '", it.key(), "': unknown key");
  }
  merged.update(j);
  using detail::field;
  using detail::require;

  RunConfig c;
  try {
    c.kind = parse_model_kind(field<std::string>(merged, "kind"));
  } catch (const ValidationError& e) {
    fail("config field 'kind': ", e.what());
  }
  c.ensemble = field<std::string>(merged, "ensemble");
  require(c.ensemble == "none" || c.ensemble == "simple" || c.ensemble == "multi", "ensemble",
          "must be none, simple or multi");
  c.finetune_seed = field<std::uint64_t>(merged, "finetune_seed");
  c.pretext_seed = field<std::uint64_t>(merged, "pretext_seed");
  c.finetune_seeds = field<std::vector<std::uint64_t>>(merged, "finetune_seeds");
  c.pretext_seeds = field<std::vector<std::uint64_t>>(merged, "pretext_seeds");
  c.split_seed = field<std::uint64_t>(merged, "split_seed");
  const auto ratios = field<std::vector<double>>(merged, "split_ratios");
  require(ratios.size() == 3, "split_ratios", "needs exactly 3 entries");
  double total = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    require(ratios[i] >= 0, "split_ratios", "entries must be non-negative");
    c.split_ratios[i] = ratios[i];
    total += ratios[i];
  }
  require(std::abs(total - 1.0) <= 1e-9, "split_ratios", "must sum to 1");

  auto& h = c.train.hyper;
  h.batch_size = field<std::size_t>(merged, "batch_size");
  require(h.batch_size >= 1, "batch_size", "must be >= 1");
  h.initial_lr = field<double>(merged, "initial_lr");
  require(h.initial_lr > 0, "initial_lr", "must be > 0");
  h.patience = field<std::size_t>(merged, "patience");
  require(h.patience >= 1, "patience", "must be >= 1");
  h.reduce_rate = field<double>(merged, "reduce_rate");
  require(h.reduce_rate > 0 && h.reduce_rate < 1, "reduce_rate", "must be in (0,1)");
  h.max_reductions = field<std::size_t>(merged, "max_reductions");
  h.dropout = field<double>(merged, "dropout");
  require(h.dropout >= 0 && h.dropout < 1, "dropout", "must be in [0,1)");
  h.recurrent_dropout = field<double>(merged, "recurrent_dropout");
  require(h.recurrent_dropout >= 0 && h.recurrent_dropout < 1, "recurrent_dropout", "must be in [0,1)");
  h.l2 = field<double>(merged, "l2");
  require(h.l2 >= 0, "l2", "must be >= 0");
  h.hidden_sizes = field<std::vector<std::size_t>>(merged, "hidden_sizes");
  require(!h.hidden_sizes.empty(), "hidden_sizes", "must not be empty");
  for (auto s : h.hidden_sizes) require(s >= 1, "hidden_sizes", "entries must be >= 1");
  h.rmsprop_rho = field<double>(merged, "rmsprop_rho");
  require(h.rmsprop_rho >= 0 && h.rmsprop_rho < 1, "rmsprop_rho", "must be in [0,1)");
  h.rmsprop_eps = field<double>(merged, "rmsprop_eps");
  require(h.rmsprop_eps > 0, "rmsprop_eps", "must be > 0");
  h.forget_bias = field<double>(merged, "forget_bias");
  h.max_epochs = field<std::size_t>(merged, "max_epochs");
  require(h.max_epochs >= 1, "max_epochs", "must be >= 1");
  h.freeze_transferred = field<bool>(merged, "freeze_transferred");

  c.train.perseveration = field<std::size_t>(merged, "perseveration");
  require(c.train.perseveration >= 1, "perseveration", "must be >= 1");
  c.train.pretext_epochs = field<std::size_t>(merged, "pretext_epochs");
  require(c.train.pretext_epochs >= 1, "pretext_epochs", "must be >= 1");
  c.train.pretext_max_hours = field<double>(merged, "pretext_max_hours");
  require(c.train.pretext_max_hours > 0, "pretext_max_hours", "must be > 0");
  c.train.lr14.lambda = field<double>(merged, "lr14_lambda");
  c.train.lr14.alpha = field<double>(merged, "lr14_alpha");
  c.train.lr517.lambda = field<double>(merged, "lr517_lambda");
  c.train.lr517.alpha = field<double>(merged, "lr517_alpha");
  require(c.train.lr14.lambda >= 0, "lr14_lambda", "must be >= 0");
  require(c.train.lr517.lambda >= 0, "lr517_lambda", "must be >= 0");
  require(c.train.lr14.alpha >= 0 && c.train.lr14.alpha <= 1, "lr14_alpha", "must be in [0,1]");
  require(c.train.lr517.alpha >= 0 && c.train.lr517.alpha <= 1, "lr517_alpha", "must be in [0,1]");
  const double tol = field<double>(merged, "lr_tolerance");
  require(tol > 0, "lr_tolerance", "must be > 0");
  const auto iters = field<std::size_t>(merged, "lr_max_iterations");
  require(iters >= 1, "lr_max_iterations", "must be >= 1");
  c.train.lr14.tolerance = c.train.lr517.tolerance = tol;
  c.train.lr14.max_iterations = c.train.lr517.max_iterations = iters;
  c.train.lr14_features = field<std::vector<std::string>>(merged, "lr14_features");
  require(!c.train.lr14_features.empty(), "lr14_features", "must not be empty");
  const auto staleness = field<std::string>(merged, "staleness");
  require(staleness == "last" || staleness == "nearest15", "staleness", "must be last or nearest15");
  c.train.staleness = staleness == "last" ? StalenessRule::LastAtOrBefore : StalenessRule::NearestWithin15;
  c.tl_source = field<std::string>(merged, "tl_source");
  try {
    c.died_in_window = parse_outcome(field<std::string>(merged, "died_in_window"));
    c.still_admitted_in_window = parse_outcome(field<std::string>(merged, "still_admitted_in_window"));
  } catch (const ValidationError& e) {
    fail("config field 'died_in_window'/'still_admitted_in_window': ", e.what());
  }
  c.workers = field<std::size_t>(merged, "workers");
  require(c.workers >= 1, "workers", "must be >= 1");
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open config '", path, "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& ex) {
    fail("config '", path, "': ", ex.what());
  }
  return run_config_from_json(j);
}

/// Fingerprint of the effective configuration.
inline std::string config_hash(const RunConfig& c) { return hex64(fnv1a64(to_json(c).dump())); }

}  // namespace hfnc

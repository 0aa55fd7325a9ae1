#pragma once

// Sparse charting -> dense, normalized, imputed design matrices.
//
// Order of operations: range filter, aggregation, z-scoring, forward fill,
// mean imputation. Because imputation happens after z-scoring, a feature
// that has not been observed yet sits at its training mean, i.e. exactly 0.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hfnc/catalog.hpp"
#include "hfnc/common.hpp"

namespace hfnc {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------------------
// aggregate_and_filter

struct FilterResult {
  std::vector<ObservationRecord> records;
  std::size_t dropped = 0;
  std::map<std::string, std::size_t> dropped_by_variable;
};

/// Drops values outside [valid_min, valid_max] and renames aggregation-group
/// members to their group feature. Records of unknown variables are dropped.
inline FilterResult aggregate_and_filter(const std::vector<ObservationRecord>& records, const Catalog& catalog) {
  FilterResult out;
  out.records.reserve(records.size());
  for (const auto& r : records) {
    const VariableSpec* spec = catalog.find(r.variable);
    if (!spec || r.value < spec->valid_min || r.value > spec->valid_max) {
      ++out.dropped;
      ++out.dropped_by_variable[r.variable];
      continue;
    }
    ObservationRecord kept = r;
    kept.variable = spec->feature_name();
    out.records.push_back(std::move(kept));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Feature layout

struct FeatureInfo {
  std::string name;
  VariableKind kind = VariableKind::Physiologic;
  double therapy_max = 0;  // therapies only
};

/// Post-aggregation features in catalog order. Support-state variables are
/// not features.
inline std::vector<FeatureInfo> feature_layout(const Catalog& catalog) {
  std::vector<FeatureInfo> out;
  std::set<std::string> seen;
  for (const auto& v : catalog.variables()) {
    if (support_modality(v.name)) continue;
    if (!seen.insert(v.feature_name()).second) continue;
    out.push_back({v.feature_name(), v.kind, v.therapy_max.value_or(0.0)});
  }
  return out;
}

/// Demographic features read from episode metadata rather than records.
inline std::optional<double> metadata_demographic(const Episode& ep, std::string_view feature) {
  if (feature == "age") return ep.age_at_admission;
  if (feature == "sex_female") return ep.sex == "F" ? 1.0 : 0.0;
  return std::nullopt;
}

/// Demographic value for an episode: metadata if the name is known, else the
/// first charted value.
inline std::optional<double> demographic_value(const Episode& ep, const std::vector<ObservationRecord>& records,
                                               const std::string& feature) {
  if (auto v = metadata_demographic(ep, feature)) return v;
  for (const auto& r : records) {
    if (r.variable == feature) return r.value;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// NormStats

struct FeatureStats {
  std::string name;
  VariableKind kind = VariableKind::Physiologic;
  double mean = 0;
  double std = 1;
  double therapy_max = 0;

  friend bool operator==(const FeatureStats&, const FeatureStats&) = default;
};

struct NormStats {
  static constexpr int kVersion = 1;
  std::string catalog_hash;
  std::vector<FeatureStats> features;   // design-matrix columns, in order
  std::vector<std::string> diagnostics;  // dropped features and why

  std::size_t dim() const { return features.size(); }

  std::optional<std::size_t> column(std::string_view name) const {
    for (std::size_t i = 0; i < features.size(); ++i) {
      if (features[i].name == name) return i;
    }
    return std::nullopt;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& f : features) out.push_back(f.name);
    return out;
  }
};

inline json to_json(const NormStats& s) {
  json feats = json::array();
  for (const auto& f : s.features) {
    json j{{"name", f.name}, {"kind", to_string(f.kind)}};
    if (is_therapy(f.kind)) {
      j["therapy_max"] = f.therapy_max;
    } else {
      j["mean"] = f.mean;
      j["std"] = f.std;
    }
    feats.push_back(std::move(j));
  }
  return json{{"format", "hfnc-norm-stats"},
              {"version", NormStats::kVersion},
              {"catalog_hash", s.catalog_hash},
              {"features", feats},
              {"diagnostics", s.diagnostics}};
}

inline NormStats norm_stats_from_json(const json& j) {
  if (j.value("format", "") != "hfnc-norm-stats") fail("not a normalization-statistics file");
  if (j.value("version", 0) != NormStats::kVersion) fail("unsupported normalization-statistics version");
  NormStats s;
  s.catalog_hash = j.at("catalog_hash").get<std::string>();
  for (const auto& f : j.at("features")) {
    FeatureStats fs;
    fs.name = f.at("name").get<std::string>();
    fs.kind = parse_variable_kind(f.at("kind").get<std::string>());
    if (is_therapy(fs.kind)) {
      fs.therapy_max = f.at("therapy_max").get<double>();
    } else {
      fs.mean = f.at("mean").get<double>();
      fs.std = f.at("std").get<double>();
    }
    s.features.push_back(std::move(fs));
  }
  s.diagnostics = j.value("diagnostics", std::vector<std::string>{});
  return s;
}

inline std::string norm_stats_hash(const NormStats& s) { return hex64(fnv1a64(to_json(s).dump())); }

// ---------------------------------------------------------------------------
// fit_normalization

/// Training data as seen by the statistics fit: one entry per episode, with
/// records already passed through aggregate_and_filter.
struct TrainingEpisode {
  const Episode* episode = nullptr;
  std::vector<ObservationRecord> records;
};

/// Population mean and standard deviation over every observed training value
/// of each z-scored feature; therapy maxima come from the catalog. Features
/// never observed or with zero variance are dropped with a diagnostic.
inline NormStats fit_normalization(const std::vector<TrainingEpisode>& training, const Catalog& catalog) {
  if (training.empty()) fail("fit_normalization: no training data");
  NormStats stats;
  stats.catalog_hash = catalog_hash(catalog);

  for (const auto& feat : feature_layout(catalog)) {
    if (is_therapy(feat.kind)) {
      stats.features.push_back({feat.name, feat.kind, 0.0, 1.0, feat.therapy_max});
      continue;
    }
    std::vector<double> values;
    for (const auto& te : training) {
      if (feat.kind == VariableKind::Demographic) {
        if (auto v = demographic_value(*te.episode, te.records, feat.name)) values.push_back(*v);
        continue;
      }
      for (const auto& r : te.records) {
        if (r.variable == feat.name) values.push_back(r.value);
      }
    }
    if (values.empty()) {
      stats.diagnostics.push_back(str_cat("feature '", feat.name, "' never observed in training; dropped"));
      continue;
    }
    double mean = 0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size());
    if (!(var > 0)) {
      stats.diagnostics.push_back(str_cat("feature '", feat.name, "' has zero training variance; dropped"));
      continue;
    }
    stats.features.push_back({feat.name, feat.kind, mean, std::sqrt(var), 0.0});
  }
  return stats;
}

// ---------------------------------------------------------------------------
// build_design_matrix

struct DesignMatrix {
  std::vector<Minutes> times;
  RowMatrix values;                 // rows = times, cols = NormStats features
  std::vector<std::uint8_t> observed;  // row-major, 1 where a value was charted at that time

  std::size_t rows() const { return times.size(); }
  std::size_t cols() const { return static_cast<std::size_t>(values.cols()); }
  bool is_observed(std::size_t r, std::size_t c) const { return observed[r * cols() + c] != 0; }
};

struct BuildDiagnostics {
  std::size_t clamped_therapy_values = 0;
};

/// Rows at the given (strictly ascending) times. Records must already be
/// filtered/aggregated. Z-scored features forward-fill and default to 0 (the
/// training mean) before their first observation; therapies are scaled by
/// therapy_max, clamped to 1, and 0 where not charted; demographics are
/// constant across rows.
inline DesignMatrix build_design_matrix(const Episode& episode, const std::vector<ObservationRecord>& records,
                                        const std::vector<Minutes>& times, const NormStats& stats,
                                        BuildDiagnostics* diag = nullptr) {
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (!(times[i - 1] < times[i])) fail("build_design_matrix: row times must be strictly ascending");
  }
  const std::size_t n = times.size();
  const std::size_t d = stats.dim();
  DesignMatrix m;
  m.times = times;
  m.values = RowMatrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  m.observed.assign(n * d, 0);

  std::map<std::string, std::size_t> col;
  for (std::size_t c = 0; c < d; ++c) col.emplace(stats.features[c].name, c);

  // Per-column time-sorted observations.
  std::vector<std::vector<std::pair<Minutes, double>>> obs(d);
  for (const auto& r : records) {
    auto it = col.find(r.variable);
    if (it != col.end()) obs[it->second].emplace_back(r.time, r.value);
  }

  for (std::size_t c = 0; c < d; ++c) {
    const FeatureStats& fs = stats.features[c];
    auto& series = obs[c];
    std::stable_sort(series.begin(), series.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

    if (fs.kind == VariableKind::Demographic) {
      auto v = demographic_value(episode, records, fs.name);
      const double z = v ? (*v - fs.mean) / fs.std : 0.0;
      for (std::size_t r = 0; r < n; ++r) {
        m.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = z;
        m.observed[r * d + c] = v ? 1 : 0;
      }
      continue;
    }

    std::size_t next = 0;
    bool have = false;
    double current = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      bool charted = false;
      double at_time = 0.0;
      while (next < series.size() && series[next].first <= times[r]) {
        if (series[next].first == times[r]) {
          charted = true;
          at_time = series[next].second;
        }
        current = series[next].second;
        have = true;
        ++next;
      }
      double cell = 0.0;
      if (is_therapy(fs.kind)) {
        if (charted) {
          cell = at_time / fs.therapy_max;
          if (cell > 1.0) {
            cell = 1.0;
            if (diag) ++diag->clamped_therapy_values;
          }
          if (cell < 0.0) cell = 0.0;
        }
      } else if (have) {
        cell = (current - fs.mean) / fs.std;
      }
      m.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = cell;
      m.observed[r * d + c] = charted ? 1 : 0;
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// perseverate

/// Repeats every row k consecutive times.
inline DesignMatrix perseverate(const DesignMatrix& m, std::size_t k) {
  if (k == 0) fail("perseverate: k must be >= 1");
  if (k == 1) return m;
  const std::size_t n = m.rows();
  const std::size_t d = m.cols();
  DesignMatrix out;
  out.times.reserve(n * k);
  out.values.resize(static_cast<Eigen::Index>(n * k), static_cast<Eigen::Index>(d));
  out.observed.reserve(n * k * d);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < k; ++j) {
      out.times.push_back(m.times[r]);
      out.values.row(static_cast<Eigen::Index>(r * k + j)) = m.values.row(static_cast<Eigen::Index>(r));
      out.observed.insert(out.observed.end(), m.observed.begin() + static_cast<std::ptrdiff_t>(r * d),
                          m.observed.begin() + static_cast<std::ptrdiff_t>((r + 1) * d));
    }
  }
  return out;
}

/// Labels aligned with perseverate(): the original label sits on the last of
/// its k copies, earlier copies are NaN.
inline std::vector<double> perseverate_labels(const std::vector<double>& labels, std::size_t k) {
  if (k == 0) fail("perseverate: k must be >= 1");
  std::vector<double> out;
  out.reserve(labels.size() * k);
  for (double y : labels) {
    for (std::size_t j = 0; j + 1 < k; ++j) out.push_back(kNaN);
    out.push_back(y);
  }
  return out;
}

/// Picks the last copy of each perseverated row.
inline std::vector<double> collapse_perseverated(const std::vector<double>& per_step, std::size_t k) {
  if (k == 0 || per_step.size() % k != 0) fail("collapse_perseverated: length not a multiple of k");
  std::vector<double> out;
  out.reserve(per_step.size() / k);
  for (std::size_t i = k - 1; i < per_step.size(); i += k) out.push_back(per_step[i]);
  return out;
}

}  // namespace hfnc

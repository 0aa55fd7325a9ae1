#pragma once

// Variable catalog, raw observation parsing and episode assembly.

#include <algorithm>
#include <charconv>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "hfnc/common.hpp"
#include "json.hpp"

namespace hfnc {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Enumerations and their file spellings

enum class VariableKind { Physiologic, Lab, Drug, Intervention, Demographic };

inline const char* to_string(VariableKind k) {
  switch (k) {
    case VariableKind::Physiologic: return "physiologic";
    case VariableKind::Lab: return "lab";
    case VariableKind::Drug: return "drug";
    case VariableKind::Intervention: return "intervention";
    case VariableKind::Demographic: return "demographic";
  }
  return "?";
}

inline VariableKind parse_variable_kind(const std::string& s) {
  if (s == "physiologic") return VariableKind::Physiologic;
  if (s == "lab") return VariableKind::Lab;
  if (s == "drug") return VariableKind::Drug;
  if (s == "intervention") return VariableKind::Intervention;
  if (s == "demographic") return VariableKind::Demographic;
  fail("unknown variable kind '", s, "'");
}

inline bool is_therapy(VariableKind k) {
  return k == VariableKind::Drug || k == VariableKind::Intervention;
}

enum class Modality { HFNC, BiPAP, NIMV, Intubation };

inline const char* to_string(Modality m) {
  switch (m) {
    case Modality::HFNC: return "HFNC";
    case Modality::BiPAP: return "BiPAP";
    case Modality::NIMV: return "NIMV";
    case Modality::Intubation: return "Intubation";
  }
  return "?";
}

/// Intervention variables with these names carry respiratory-support state
/// (value 1 = start, 0 = stop) and are lifted into Episode::support_events.
inline std::optional<Modality> support_modality(std::string_view variable) {
  if (variable == "hfnc") return Modality::HFNC;
  if (variable == "bipap") return Modality::BiPAP;
  if (variable == "nimv") return Modality::NIMV;
  if (variable == "intubation") return Modality::Intubation;
  return std::nullopt;
}

inline const char* support_variable(Modality m) {
  switch (m) {
    case Modality::HFNC: return "hfnc";
    case Modality::BiPAP: return "bipap";
    case Modality::NIMV: return "nimv";
    case Modality::Intubation: return "intubation";
  }
  return "?";
}

inline bool is_escalation(Modality m) { return m != Modality::HFNC; }

enum class SupportAction { Start, Stop };

enum class Disposition {
  GeneralCareFloor,
  Home,
  StepDownUnit,
  OperatingRoom,
  AnotherHospitalICU,
  AnotherICUCurrentHospital,
  Died,
  StillAdmitted
};

inline const char* to_string(Disposition d) {
  switch (d) {
    case Disposition::GeneralCareFloor: return "GeneralCareFloor";
    case Disposition::Home: return "Home";
    case Disposition::StepDownUnit: return "StepDownUnit";
    case Disposition::OperatingRoom: return "OperatingRoom";
    case Disposition::AnotherHospitalICU: return "AnotherHospitalICU";
    case Disposition::AnotherICUCurrentHospital: return "AnotherICUCurrentHospital";
    case Disposition::Died: return "Died";
    case Disposition::StillAdmitted: return "StillAdmitted";
  }
  return "?";
}

inline Disposition parse_disposition(const std::string& s) {
  for (auto d : {Disposition::GeneralCareFloor, Disposition::Home, Disposition::StepDownUnit,
                 Disposition::OperatingRoom, Disposition::AnotherHospitalICU,
                 Disposition::AnotherICUCurrentHospital, Disposition::Died,
                 Disposition::StillAdmitted}) {
    if (s == to_string(d)) return d;
  }
  fail("unknown disposition '", s, "'");
}

// ---------------------------------------------------------------------------
// Domain types

struct VariableSpec {
  std::string name;
  VariableKind kind = VariableKind::Physiologic;
  std::string unit;
  double valid_min = 0.0;
  double valid_max = 1.0;
  std::optional<double> therapy_max;
  std::optional<std::string> aggregation_group;

  /// Name of the model feature this variable feeds.
  const std::string& feature_name() const {
    return aggregation_group ? *aggregation_group : name;
  }

  friend bool operator==(const VariableSpec&, const VariableSpec&) = default;
};

class Catalog {
 public:
  Catalog() = default;
  explicit Catalog(std::vector<VariableSpec> vars) : vars_(std::move(vars)) { reindex(); }

  const std::vector<VariableSpec>& variables() const { return vars_; }
  std::size_t size() const { return vars_.size(); }

  const VariableSpec* find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    return it == index_.end() ? nullptr : &vars_[it->second];
  }

  friend bool operator==(const Catalog& a, const Catalog& b) { return a.vars_ == b.vars_; }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < vars_.size(); ++i) index_.emplace(vars_[i].name, i);
  }

  std::vector<VariableSpec> vars_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct ObservationRecord {
  std::string episode_id;
  Minutes time = 0;
  std::string variable;
  double value = 0;

  friend bool operator==(const ObservationRecord&, const ObservationRecord&) = default;
  friend auto operator<=>(const ObservationRecord&, const ObservationRecord&) = default;
};

struct SupportEvent {
  Minutes time = 0;
  Modality modality = Modality::HFNC;
  SupportAction action = SupportAction::Start;

  friend bool operator==(const SupportEvent&, const SupportEvent&) = default;
};

struct Episode {
  std::string episode_id;
  std::string patient_id;
  double age_at_admission = 0;
  std::string sex;
  std::set<std::string> diagnosis_tags;
  std::set<std::string> care_flags;
  Disposition disposition = Disposition::Home;
  Minutes discharge_time = 0;
  std::vector<ObservationRecord> records;
  std::vector<SupportEvent> support_events;

  bool has_tag(std::string_view tag) const { return diagnosis_tags.count(std::string(tag)) > 0; }
  bool has_flag(std::string_view flag) const { return care_flags.count(std::string(flag)) > 0; }
  bool died() const { return disposition == Disposition::Died; }
};

// ---------------------------------------------------------------------------
// Number formatting shared by every writer: shortest round-trip form.

inline std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::optional<double> parse_number(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) {
    return std::nullopt;
  }
  return v;
}

// ---------------------------------------------------------------------------
// Catalog serialization

inline json to_json(const VariableSpec& v) {
  json j{{"name", v.name},
         {"kind", to_string(v.kind)},
         {"unit", v.unit},
         {"valid_min", v.valid_min},
         {"valid_max", v.valid_max}};
  if (v.therapy_max) j["therapy_max"] = *v.therapy_max;
  if (v.aggregation_group) j["aggregation_group"] = *v.aggregation_group;
  return j;
}

inline json to_json(const Catalog& c) {
  json arr = json::array();
  for (const auto& v : c.variables()) arr.push_back(to_json(v));
  return arr;
}

inline Catalog catalog_from_json(const json& j) {
  if (!j.is_array()) fail("catalog: expected a JSON array of variable specs");
  std::vector<VariableSpec> vars;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& e = j[i];
    try {
      VariableSpec v;
      v.name = e.at("name").get<std::string>();
      v.kind = parse_variable_kind(e.at("kind").get<std::string>());
      v.unit = e.value("unit", "");
      v.valid_min = e.at("valid_min").get<double>();
      v.valid_max = e.at("valid_max").get<double>();
      if (e.contains("therapy_max") && !e["therapy_max"].is_null()) {
        v.therapy_max = e["therapy_max"].get<double>();
      }
      if (e.contains("aggregation_group") && !e["aggregation_group"].is_null()) {
        v.aggregation_group = e["aggregation_group"].get<std::string>();
      }
      vars.push_back(std::move(v));
    } catch (const json::exception& ex) {
      fail("catalog[", i, "]: ", ex.what());
    }
  }
  return Catalog(std::move(vars));
}

inline std::string catalog_hash(const Catalog& c) { return hex64(fnv1a64(to_json(c).dump())); }

// ---------------------------------------------------------------------------
// validate_catalog

struct CatalogCheck {
  std::optional<Catalog> catalog;    // set iff errors is empty
  std::vector<std::string> errors;
  std::vector<std::string> removed;  // rare therapies pruned

  bool ok() const { return errors.empty(); }
};

/// Prevalence of each variable: number of episodes with at least one record.
struct Prevalence {
  std::size_t n_episodes = 0;
  std::map<std::string, std::size_t> episodes_with;
};

inline Prevalence therapy_prevalence(const std::vector<const Episode*>& episodes) {
  Prevalence p;
  p.n_episodes = episodes.size();
  for (const Episode* ep : episodes) {
    std::set<std::string> seen;
    for (const auto& r : ep->records) seen.insert(r.variable);
    for (const auto& s : seen) ++p.episodes_with[s];
  }
  return p;
}

/// Checks catalog invariants; with a prevalence table, also drops drugs and
/// interventions charted in fewer than 1% of training episodes (strict <).
/// Support-state variables are never pruned.
inline CatalogCheck validate_catalog(const Catalog& catalog,
                                     const std::optional<Prevalence>& prevalence = std::nullopt) {
  CatalogCheck out;
  std::set<std::string> names;
  std::map<std::string, VariableKind> group_kind;
  for (const auto& v : catalog.variables()) {
    if (v.name.empty()) out.errors.push_back("variable with empty name");
    if (!names.insert(v.name).second) out.errors.push_back(str_cat("duplicate variable name '", v.name, "'"));
    if (!(v.valid_min < v.valid_max)) {
      out.errors.push_back(str_cat("variable '", v.name, "': valid_min (", v.valid_min,
                                   ") must be < valid_max (", v.valid_max, ")"));
    }
    if (is_therapy(v.kind)) {
      if (!v.therapy_max) {
        out.errors.push_back(str_cat("variable '", v.name, "': therapy_max required for ", to_string(v.kind)));
      } else if (!(*v.therapy_max > 0)) {
        out.errors.push_back(str_cat("variable '", v.name, "': therapy_max must be > 0"));
      }
    } else if (v.therapy_max) {
      out.errors.push_back(str_cat("variable '", v.name, "': therapy_max only allowed for drug/intervention"));
    }
    if (v.aggregation_group) {
      auto [it, inserted] = group_kind.emplace(*v.aggregation_group, v.kind);
      if (!inserted && it->second != v.kind) {
        out.errors.push_back(str_cat("aggregation group '", *v.aggregation_group, "' mixes variable kinds"));
      }
    }
  }
  for (const auto& [group, kind] : group_kind) {
    const VariableSpec* same = catalog.find(group);
    if (same && same->feature_name() != group) {
      out.errors.push_back(str_cat("aggregation group '", group, "' collides with variable of the same name"));
    }
  }
  if (!out.errors.empty()) return out;

  std::vector<VariableSpec> kept;
  for (const auto& v : catalog.variables()) {
    bool drop = false;
    if (prevalence && prevalence->n_episodes > 0 && is_therapy(v.kind) && !support_modality(v.name)) {
      auto it = prevalence->episodes_with.find(v.name);
      const std::size_t n = it == prevalence->episodes_with.end() ? 0 : it->second;
      // n / N < 1%  <=>  100 n < N
      drop = 100 * n < prevalence->n_episodes;
    }
    if (drop) {
      out.removed.push_back(v.name);
    } else {
      kept.push_back(v);
    }
  }
  out.catalog = Catalog(std::move(kept));
  return out;
}

// ---------------------------------------------------------------------------
// parse_observation_stream

struct ParseDiagnostic {
  std::size_t line = 0;
  std::string message;
};

struct ParseResult {
  std::vector<ObservationRecord> records;
  std::vector<ParseDiagnostic> diagnostics;
};

inline constexpr std::string_view kObservationHeader = "episode_id,time_min,variable,value";

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      fields.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return fields;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace detail

/// Reads observation CSV (optional header) or JSON-lines, auto-detected from
/// the first non-blank character. Invalid lines become diagnostics.
inline ParseResult parse_observation_stream(std::istream& in, const Catalog& catalog) {
  if (!in.good()) throw std::runtime_error("observation stream is unreadable");
  ParseResult out;
  std::string line;
  std::size_t lineno = 0;
  std::optional<bool> jsonl;
  auto reject = [&](std::string msg) { out.diagnostics.push_back({lineno, std::move(msg)}); };

  while (std::getline(in, line)) {
    ++lineno;
    std::string_view view = detail::trim(line);
    if (lineno == 1 && view.size() >= 3 && static_cast<unsigned char>(view[0]) == 0xEF) view.remove_prefix(3);
    if (view.empty()) continue;
    if (!jsonl) {
      jsonl = view.front() == '{';
      if (!*jsonl && view == kObservationHeader) continue;
    }

    ObservationRecord rec;
    std::string value_text;
    if (*jsonl) {
      json j = json::parse(view, nullptr, false);
      if (j.is_discarded() || !j.is_object()) {
        reject("malformed JSON object");
        continue;
      }
      if (!j.contains("episode_id") || !j.contains("time_min") || !j.contains("variable") || !j.contains("value")) {
        reject("missing one of episode_id, time_min, variable, value");
        continue;
      }
      if (!j["episode_id"].is_string() || !j["variable"].is_string()) {
        reject("episode_id and variable must be strings");
        continue;
      }
      rec.episode_id = j["episode_id"].get<std::string>();
      rec.variable = j["variable"].get<std::string>();
      if (!j["time_min"].is_number()) {
        reject("non-numeric time_min");
        continue;
      }
      rec.time = j["time_min"].get<double>();
      if (!j["value"].is_number()) {
        reject(str_cat("non-numeric value for '", rec.variable, "'"));
        continue;
      }
      rec.value = j["value"].get<double>();
    } else {
      auto fields = detail::split_csv(view);
      if (fields.size() != 4) {
        reject(str_cat("expected 4 comma-separated fields, got ", fields.size()));
        continue;
      }
      rec.episode_id = std::string(detail::trim(fields[0]));
      rec.variable = std::string(detail::trim(fields[2]));
      auto t = parse_number(fields[1]);
      if (!t) {
        reject(str_cat("non-numeric time '", fields[1], "'"));
        continue;
      }
      rec.time = *t;
      auto v = parse_number(fields[3]);
      if (!v) {
        reject(str_cat("non-numeric value '", fields[3], "' for '", rec.variable, "'"));
        continue;
      }
      rec.value = *v;
    }
    if (rec.episode_id.empty()) {
      reject("empty episode_id");
      continue;
    }
    if (!(rec.time >= 0) || !std::isfinite(rec.time)) {
      reject(str_cat("negative or non-finite time ", rec.time));
      continue;
    }
    if (!std::isfinite(rec.value)) {
      reject("non-finite value");
      continue;
    }
    if (!catalog.find(rec.variable)) {
      reject(str_cat("unknown variable '", rec.variable, "'"));
      continue;
    }
    out.records.push_back(std::move(rec));
  }
  if (in.bad()) throw std::runtime_error(str_cat("read error at line ", lineno));
  return out;
}

inline void write_observations_csv(std::ostream& os, const std::vector<ObservationRecord>& records) {
  os << kObservationHeader << '\n';
  for (const auto& r : records) {
    os << r.episode_id << ',' << format_number(r.time) << ',' << r.variable << ','
       << format_number(r.value) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Episode metadata

inline json metadata_to_json(const Episode& e) {
  return json{{"episode_id", e.episode_id},
              {"patient_id", e.patient_id},
              {"age_at_admission", e.age_at_admission},
              {"sex", e.sex},
              {"diagnosis_tags", e.diagnosis_tags},
              {"care_flags", e.care_flags},
              {"disposition", to_string(e.disposition)},
              {"discharge_time", e.discharge_time}};
}

inline Episode metadata_from_json(const json& j) {
  Episode e;
  e.episode_id = j.at("episode_id").get<std::string>();
  e.patient_id = j.at("patient_id").get<std::string>();
  e.age_at_admission = j.at("age_at_admission").get<double>();
  e.sex = j.value("sex", "");
  if (j.contains("diagnosis_tags")) e.diagnosis_tags = j["diagnosis_tags"].get<std::set<std::string>>();
  if (j.contains("care_flags")) {
    e.care_flags = j["care_flags"].get<std::set<std::string>>();
    for (const auto& f : e.care_flags) {
      if (f != "DNR" && f != "DNI") fail("episode '", e.episode_id, "': unknown care flag '", f, "'");
    }
  }
  e.disposition = parse_disposition(j.at("disposition").get<std::string>());
  e.discharge_time = j.at("discharge_time").get<double>();
  if (!(e.discharge_time >= 0)) fail("episode '", e.episode_id, "': negative discharge_time");
  return e;
}

inline std::vector<Episode> read_metadata_jsonl(std::istream& in) {
  std::vector<Episode> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) fail("episode metadata line ", lineno, ": malformed JSON");
    try {
      out.push_back(metadata_from_json(j));
    } catch (const json::exception& ex) {
      fail("episode metadata line ", lineno, ": ", ex.what());
    } catch (const ValidationError& ex) {
      fail("episode metadata line ", lineno, ": ", ex.what());
    }
  }
  return out;
}

inline void write_metadata_jsonl(std::ostream& os, const std::vector<Episode>& episodes) {
  for (const auto& e : episodes) os << metadata_to_json(e).dump() << '\n';
}

// ---------------------------------------------------------------------------
// assemble_episodes / flatten

/// Groups records under their metadata headers (output follows metadata
/// order), sorts records by time and lifts support-state records into
/// support_events.
inline std::vector<Episode> assemble_episodes(const std::vector<ObservationRecord>& records,
                                              std::vector<Episode> metadata) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < metadata.size(); ++i) {
    if (!index.emplace(metadata[i].episode_id, i).second) {
      fail("duplicate episode metadata for '", metadata[i].episode_id, "'");
    }
    metadata[i].records.clear();
    metadata[i].support_events.clear();
  }
  for (const auto& r : records) {
    auto it = index.find(r.episode_id);
    if (it == index.end()) fail("record for episode '", r.episode_id, "' has no metadata header");
    Episode& ep = metadata[it->second];
    if (auto m = support_modality(r.variable)) {
      ep.support_events.push_back({r.time, *m, r.value != 0 ? SupportAction::Start : SupportAction::Stop});
    } else {
      ep.records.push_back(r);
    }
  }
  for (auto& ep : metadata) {
    std::stable_sort(ep.records.begin(), ep.records.end(),
                     [](const auto& a, const auto& b) { return a.time < b.time; });
    std::stable_sort(ep.support_events.begin(), ep.support_events.end(),
                     [](const auto& a, const auto& b) { return a.time < b.time; });
    if (!ep.records.empty() && ep.records.back().time > ep.discharge_time) {
      fail("episode '", ep.episode_id, "': record at t=", ep.records.back().time,
           " after discharge_time ", ep.discharge_time);
    }
    std::map<Modality, bool> active;
    for (const auto& ev : ep.support_events) {
      if (ev.time > ep.discharge_time) {
        fail("episode '", ep.episode_id, "': support event at t=", ev.time, " after discharge");
      }
      bool& on = active[ev.modality];
      if (ev.action == SupportAction::Start) {
        if (on) fail("episode '", ep.episode_id, "': ", to_string(ev.modality), " start at t=", ev.time,
                     " while already active");
        on = true;
      } else {
        if (!on) fail("episode '", ep.episode_id, "': ", to_string(ev.modality), " stop at t=", ev.time,
                      " without prior start");
        on = false;
      }
    }
  }
  return metadata;
}

/// Inverse of assemble_episodes: records plus support events as records.
inline std::vector<ObservationRecord> flatten(const Episode& ep) {
  std::vector<ObservationRecord> out = ep.records;
  for (const auto& ev : ep.support_events) {
    out.push_back({ep.episode_id, ev.time, support_variable(ev.modality),
                   ev.action == SupportAction::Start ? 1.0 : 0.0});
  }
  return out;
}

}  // namespace hfnc

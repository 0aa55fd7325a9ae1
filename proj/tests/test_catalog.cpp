#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "hfnc/catalog.hpp"
#include "hfnc/synth.hpp"

using namespace hfnc;

namespace {

Catalog small_catalog() {
  return Catalog({
      {"heart_rate", VariableKind::Physiologic, "bpm", 0, 400, std::nullopt, std::nullopt},
      {"furosemide", VariableKind::Drug, "mg/kg", 0, 20, 2.0, std::nullopt},
      {"rare_drug", VariableKind::Drug, "mg", 0, 20, 1.0, std::nullopt},
      {"hfnc", VariableKind::Intervention, "on/off", 0, 1, 1.0, std::nullopt},
      {"bipap", VariableKind::Intervention, "on/off", 0, 1, 1.0, std::nullopt},
  });
}

ParseResult parse(const std::string& text, const Catalog& c) {
  std::istringstream in(text);
  return parse_observation_stream(in, c);
}

Episode meta(const std::string& id, Minutes discharge = 10000) {
  Episode e;
  e.episode_id = id;
  e.patient_id = "p-" + id;
  e.age_at_admission = 3;
  e.discharge_time = discharge;
  return e;
}

}  // namespace

TEST(ParseObservations, EmptyStreamGivesNothing) {
  auto r = parse("", small_catalog());
  EXPECT_TRUE(r.records.empty());
  EXPECT_TRUE(r.diagnostics.empty());
}

TEST(ParseObservations, SingleValidLine) {
  auto r = parse("ep1,120,heart_rate,140\n", small_catalog());
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_EQ(r.records[0], (ObservationRecord{"ep1", 120, "heart_rate", 140}));
}

TEST(ParseObservations, UnknownVariableBecomesLineDiagnostic) {
  auto r = parse("episode_id,time_min,variable,value\nep1,120,heart_rate,140\nep1,130,blood_type,4\n", small_catalog());
  ASSERT_EQ(r.records.size(), 1u);
  ASSERT_EQ(r.diagnostics.size(), 1u);
  EXPECT_EQ(r.diagnostics[0].line, 3u);
  EXPECT_NE(r.diagnostics[0].message.find("blood_type"), std::string::npos);
}

TEST(ParseObservations, NonNumericValueRejected) {
  auto r = parse("ep1,120,heart_rate,fast\nep1,x,heart_rate,1\n", small_catalog());
  EXPECT_TRUE(r.records.empty());
  EXPECT_EQ(r.diagnostics.size(), 2u);
}

TEST(ParseObservations, JsonLinesAccepted) {
  auto r = parse(R"({"episode_id":"e","time_min":5,"variable":"heart_rate","value":99.5})"
                 "\n{bad json\n",
                 small_catalog());
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_EQ(r.records[0].value, 99.5);
  EXPECT_EQ(r.diagnostics.size(), 1u);
}

TEST(ParseObservations, SerializeParseRoundTripIsBitExact) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 400);
  std::vector<ObservationRecord> recs;
  for (int i = 0; i < 500; ++i) recs.push_back({"ep" + std::to_string(i % 7), std::floor(u(rng)), "heart_rate", u(rng)});
  std::ostringstream os;
  write_observations_csv(os, recs);
  auto back = parse(os.str(), small_catalog());
  EXPECT_TRUE(back.diagnostics.empty());
  EXPECT_EQ(back.records, recs);
}

TEST(AssembleEpisodes, MetadataOnlyGivesEmptyEpisode) {
  auto eps = assemble_episodes({}, {meta("a")});
  ASSERT_EQ(eps.size(), 1u);
  EXPECT_TRUE(eps[0].records.empty());
  EXPECT_TRUE(eps[0].support_events.empty());
}

TEST(AssembleEpisodes, SupportEventsLifted) {
  auto eps = assemble_episodes({{"a", 180, "hfnc", 0}, {"a", 60, "hfnc", 1}, {"a", 70, "heart_rate", 120}}, {meta("a")});
  ASSERT_EQ(eps[0].support_events.size(), 2u);
  EXPECT_EQ(eps[0].support_events[0], (SupportEvent{60, Modality::HFNC, SupportAction::Start}));
  EXPECT_EQ(eps[0].support_events[1], (SupportEvent{180, Modality::HFNC, SupportAction::Stop}));
  ASSERT_EQ(eps[0].records.size(), 1u);
}

TEST(AssembleEpisodes, StopWithoutStartNamesTime) {
  try {
    assemble_episodes({{"a", 50, "hfnc", 0}}, {meta("a")});
    FAIL() << "expected an error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("t=50"), std::string::npos) << e.what();
  }
}

TEST(AssembleEpisodes, RecordWithoutMetadataIsFatal) {
  try {
    assemble_episodes({{"ghost", 1, "heart_rate", 80}}, {meta("a")});
    FAIL() << "expected an error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("ghost"), std::string::npos);
  }
}

TEST(AssembleEpisodes, FlattenRestoresRecordMultiset) {
  auto cohort = generate_cohort([] {
    SynthConfig c;
    c.n_patients = 20;
    c.n_trials = 25;
    c.n_pretext_episodes = 3;
    return c;
  }());
  auto records = cohort.all_records();
  std::vector<Episode> metas;
  for (const auto& e : cohort.episodes) {
    Episode m = e;
    m.records.clear();
    m.support_events.clear();
    metas.push_back(m);
  }
  auto eps = assemble_episodes(records, metas);
  std::vector<ObservationRecord> back;
  for (const auto& e : eps) {
    auto f = flatten(e);
    back.insert(back.end(), f.begin(), f.end());
  }
  std::sort(records.begin(), records.end());
  std::sort(back.begin(), back.end());
  EXPECT_EQ(records, back);
}

TEST(ValidateCatalog, RareTherapyPrunedAtStrictThreshold) {
  // 200 training episodes: furosemide in 2 (1.0%, kept), rare_drug in 1 (0.5%, removed).
  std::vector<Episode> eps;
  for (int i = 0; i < 200; ++i) {
    Episode e = meta("e" + std::to_string(i));
    if (i < 2) e.records.push_back({e.episode_id, 1, "furosemide", 1});
    if (i == 5) e.records.push_back({e.episode_id, 1, "rare_drug", 1});
    eps.push_back(e);
  }
  std::vector<const Episode*> ptrs;
  for (const auto& e : eps) ptrs.push_back(&e);
  auto check = validate_catalog(small_catalog(), therapy_prevalence(ptrs));
  ASSERT_TRUE(check.ok());
  EXPECT_EQ(check.removed, std::vector<std::string>{"rare_drug"});
  EXPECT_NE(check.catalog->find("furosemide"), nullptr);
  // support-state variables are never pruned
  EXPECT_NE(check.catalog->find("bipap"), nullptr);
}

TEST(ValidateCatalog, InvertedRangeNamesVariable) {
  Catalog c({{"temp", VariableKind::Physiologic, "C", 45, 25, std::nullopt, std::nullopt}});
  auto check = validate_catalog(c);
  ASSERT_FALSE(check.ok());
  EXPECT_NE(check.errors[0].find("temp"), std::string::npos);
}

TEST(ValidateCatalog, DuplicateNamesAndMissingTherapyMax) {
  Catalog c({{"x", VariableKind::Physiologic, "", 0, 1, std::nullopt, std::nullopt},
             {"x", VariableKind::Physiologic, "", 0, 1, std::nullopt, std::nullopt},
             {"d", VariableKind::Drug, "", 0, 1, std::nullopt, std::nullopt}});
  auto check = validate_catalog(c);
  EXPECT_EQ(check.errors.size(), 2u);
}

TEST(ValidateCatalog, Idempotent) {
  std::vector<Episode> eps(150, meta("e"));
  eps[0].records.push_back({"e", 1, "furosemide", 1});
  eps[1].records.push_back({"e", 1, "furosemide", 1});
  std::vector<const Episode*> ptrs;
  for (const auto& e : eps) ptrs.push_back(&e);
  const auto prev = therapy_prevalence(ptrs);
  auto once = validate_catalog(small_catalog(), prev);
  auto twice = validate_catalog(*once.catalog, prev);
  EXPECT_EQ(*once.catalog, *twice.catalog);
  EXPECT_TRUE(twice.removed.empty());
}

TEST(CatalogJson, RoundTrip) {
  const Catalog c = synthetic_catalog();
  EXPECT_EQ(catalog_from_json(to_json(c)), c);
  EXPECT_EQ(catalog_hash(catalog_from_json(to_json(c))), catalog_hash(c));
}

TEST(MetadataJson, RoundTrip) {
  Episode e = meta("x", 777);
  e.sex = "F";
  e.diagnosis_tags = {"respiratory", "apnea"};
  e.care_flags = {"DNR"};
  e.disposition = Disposition::StepDownUnit;
  std::ostringstream os;
  write_metadata_jsonl(os, {e});
  std::istringstream in(os.str());
  auto back = read_metadata_jsonl(in);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].diagnosis_tags, e.diagnosis_tags);
  EXPECT_EQ(back[0].care_flags, e.care_flags);
  EXPECT_EQ(back[0].disposition, e.disposition);
  EXPECT_EQ(back[0].discharge_time, 777);
}

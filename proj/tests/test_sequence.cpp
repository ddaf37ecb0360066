#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "ehrmamba/ehr_data.hpp"
#include "ehrmamba/sequence.hpp"
#include "fixtures.hpp"

using namespace ehrmamba;

namespace {

Vocabulary fixture_vocab() { return Vocabulary::build(fixtures::small_catalog()); }

}  // namespace

TEST(Vocabulary, EmptyCatalogHoldsOnlySpecials) {
  const auto v = Vocabulary::build({});
  EXPECT_EQ(v.size(), static_cast<std::size_t>(tokens::kSpecialCount));
  std::set<std::string> names;
  for (const auto& [name, id] : v.special_ids()) {
    names.insert(name);
    EXPECT_EQ(v.find(name), id);
  }
  EXPECT_EQ(names.size(), static_cast<std::size_t>(tokens::kSpecialCount));
  for (const char* s : {"[CLS]", "[VS]", "[VE]", "[REG]", "[PAD]", "[UNK]", "[MASK]", "[LT]", "[W_0]", "[W_3]", "[M_0]",
                        "[M_12]", "[MOR]", "[LOS]", "[REA]", "[C0]", "[C1]", "[C2]"}) {
    EXPECT_TRUE(v.find(s).has_value()) << s;
  }
  EXPECT_EQ(v.find("[PAD]"), 0);
}

TEST(Vocabulary, SingleInsertion) {
  const auto v = Vocabulary::build({{"proc_A", EventKind::Procedure}});
  EXPECT_EQ(v.size(), static_cast<std::size_t>(tokens::kSpecialCount) + 1);
  EXPECT_EQ(v.type_of(*v.find("proc_A")), TokenType::Procedure);
}

TEST(Vocabulary, DuplicateRejected) {
  EXPECT_THROW(Vocabulary::build({{"x", EventKind::Lab}, {"x", EventKind::Lab}}), DataError);
}

TEST(Vocabulary, ExhaustiveRoundTrip) {
  GeneratorConfig g;
  const auto v = Vocabulary::build(generator_catalog(g));
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto id = static_cast<TokenId>(i);
    EXPECT_EQ(v.find(v.token(id)), id);
    EXPECT_LT(static_cast<std::size_t>(v.type_of(id)), kTokenTypeCount);
  }
  std::stringstream ss;
  v.write_tsv(ss);
  EXPECT_EQ(Vocabulary::read_tsv(ss), v);
}

TEST(Vocabulary, ReadRejectsBrokenRegistry) {
  std::stringstream ss("0\t[CLS]\tstart\n");
  EXPECT_THROW(Vocabulary::read_tsv(ss), FormatError);
}

TEST(IntervalToken, Examples) {
  EXPECT_EQ(interval_token(14), week_token(2));
  EXPECT_EQ(interval_token(0), week_token(0));
  EXPECT_EQ(interval_token(27), week_token(3));
  EXPECT_EQ(interval_token(28), month_token(0));
  EXPECT_EQ(interval_token(364), month_token(11));
  EXPECT_EQ(interval_token(400), tokens::LT);
  EXPECT_THROW(interval_token(-1), ArgumentError);
}

TEST(IntervalToken, MonotoneInGap) {
  // Registry order W_0..W_3, M_0..M_12, LT is also id order.
  TokenId prev = interval_token(0);
  for (std::int64_t g = 1; g < 2000; ++g) {
    const TokenId cur = interval_token(g);
    EXPECT_GE(cur, prev) << g;
    prev = cur;
  }
}

TEST(Encode, SingleVisit) {
  const auto v = fixture_vocab();
  PatientRecord r;
  r.patient_id = "p";
  const Timestamp t = make_timestamp(2020, 1, 1);
  r.visits.push_back({"v", t, t + 3600, {fixtures::ev("proc_A", EventKind::Procedure, t + 1),
                                          fixtures::ev("med_B", EventKind::Medication, t + 2)}});
  const auto s = encode_patient(r, v, 10);
  const std::vector<TokenId> want{tokens::CLS, tokens::VS, 31, 32, tokens::VE, tokens::REG, 0, 0, 0, 0};
  EXPECT_EQ(s.ids, want);
  EXPECT_EQ(s.true_length, 6u);
  EXPECT_EQ(s.segments[2], 1);
  EXPECT_EQ(s.segments[3], 1);
  EXPECT_EQ(s.segments[1], 0);
}

TEST(Encode, ThreeVisitFixtureMatchesHandBuiltSequence) {
  const auto v = fixture_vocab();
  const auto r = fixtures::three_visit_record();
  const auto s = encode_patient(r, v, 20);

  const Timestamp t0 = r.visits[0].start;
  auto age = [&](Timestamp t) { return static_cast<double>(t - r.birth_date) / (365.25 * 86400.0); };
  auto weeks = [&](Timestamp t) { return static_cast<double>(t - t0) / (7.0 * 86400.0); };
  const auto& a = r.visits[0].events;
  const auto& b = r.visits[1].events;
  const auto& c = r.visits[2].events;

  PatientSequence want;
  want.patient_id = "fx";
  want.push(tokens::CLS, TokenType::Start);
  want.push(tokens::VS, TokenType::VisitStart);
  want.push(31, TokenType::Procedure, age(a[0].timestamp), weeks(a[0].timestamp), 1, 1);
  want.push(32, TokenType::Medication, age(a[1].timestamp), weeks(a[1].timestamp), 1, 1);
  want.push(tokens::VE, TokenType::VisitEnd);
  want.push(tokens::REG, TokenType::Register);
  want.push(tokens::W0 + 2, TokenType::Interval);
  want.push(tokens::VS, TokenType::VisitStart);
  want.push(33, TokenType::Lab, age(b[0].timestamp), weeks(b[0].timestamp), 2, 2);
  want.push(tokens::VE, TokenType::VisitEnd);
  want.push(tokens::REG, TokenType::Register);
  want.push(tokens::M0 + 3, TokenType::Interval);  // 100 days
  want.push(tokens::VS, TokenType::VisitStart);
  want.push(32, TokenType::Medication, age(c[0].timestamp), weeks(c[0].timestamp), 1, 3);
  want.push(31, TokenType::Procedure, age(c[1].timestamp), weeks(c[1].timestamp), 1, 3);
  want.push(tokens::VE, TokenType::VisitEnd);
  want.push(tokens::REG, TokenType::Register);
  want.true_length = 17;
  while (want.ids.size() < 20) {
    want.push(tokens::PAD, TokenType::Pad);
    want.positions.back() = 0;
  }
  EXPECT_EQ(s, want);
  EXPECT_FALSE(check_sequence(s).has_value());
}

TEST(Encode, TwoWeekGap) {
  const auto v = fixture_vocab();
  auto r = fixtures::three_visit_record();
  r.visits.pop_back();
  const auto s = encode_patient(r, v, 16);
  EXPECT_EQ(s.ids[6], week_token(2));
  EXPECT_EQ(s.ids[7], tokens::VS);
  EXPECT_EQ(s.segments[8], 2);
}

TEST(Encode, UnknownConceptAndEmptyRecord) {
  const auto v = fixture_vocab();
  auto r = fixtures::three_visit_record();
  r.visits[0].events[0].code = "never_seen";
  const auto s = encode_patient(r, v, 32);
  EXPECT_EQ(s.ids[2], tokens::UNK);
  EXPECT_EQ(s.types[2], TokenType::Procedure);
  PatientRecord empty;
  EXPECT_THROW(encode_patient(empty, v, 32), DataError);
}

TEST(PadTruncate, PadsShortSequence) {
  PatientSequence s;
  s.push(tokens::CLS, TokenType::Start);
  s.push(tokens::VS, TokenType::VisitStart);
  for (int i = 0; i < 6; ++i) s.push(31, TokenType::Procedure, 1.0, 1.0, 1, 1);
  s.push(tokens::VE, TokenType::VisitEnd);
  s.push(tokens::REG, TokenType::Register);
  s.true_length = 10;
  const auto p = pad_truncate(s, 16);
  ASSERT_EQ(p.length(), 16u);
  for (std::size_t i = 10; i < 16; ++i) EXPECT_EQ(p.ids[i], tokens::PAD);
  EXPECT_EQ(pad_truncate(p, 16), p);
  const auto same = pad_truncate(s, 10);
  EXPECT_EQ(same.ids, s.ids);
}

TEST(PadTruncate, DropsOldestVisit) {
  const auto v = fixture_vocab();
  const auto r = fixtures::three_visit_record();
  const auto full = encode_patient(r, v, 17);
  const auto cut = encode_patient(r, v, 16);
  // Oldest visit ([VS] e e [VE] [REG]) and the interval token after it go.
  std::vector<TokenId> want{tokens::CLS};
  want.insert(want.end(), full.ids.begin() + 7, full.ids.begin() + 17);
  want.resize(16, tokens::PAD);
  EXPECT_EQ(cut.ids, want);
  EXPECT_EQ(cut.true_length, 11u);
  for (std::size_t i = 0; i < cut.true_length; ++i) EXPECT_EQ(cut.positions[i], static_cast<int>(i));
  EXPECT_EQ(cut.visit_orders[2], 2);
  EXPECT_FALSE(check_sequence(cut).has_value());
}

TEST(PadTruncate, OversizeVisitRejected) {
  const auto v = fixture_vocab();
  auto r = fixtures::three_visit_record();
  r.visits.resize(1);
  EXPECT_THROW(encode_patient(r, v, 4), DataError);
}

TEST(TaskToken, ReplacesFirstAndLast) {
  const auto v = fixture_vocab();
  const auto s = encode_patient(fixtures::three_visit_record(), v, 24);
  const auto t = apply_task_token(s, TaskKind::MOR);
  EXPECT_EQ(t.ids[0], task_token(TaskKind::MOR));
  EXPECT_EQ(t.ids[t.true_length - 1], task_token(TaskKind::MOR));
  std::size_t changed = 0;
  for (std::size_t i = 0; i < s.length(); ++i) {
    if (s.ids[i] != t.ids[i]) ++changed;
    EXPECT_EQ(s.ages[i], t.ages[i]);
    EXPECT_EQ(s.segments[i], t.segments[i]);
  }
  EXPECT_EQ(changed, 2u);
  EXPECT_EQ(t.ids[5], tokens::REG);
  EXPECT_EQ(t.ids[10], tokens::REG);
  EXPECT_EQ(apply_task_token(t, TaskKind::MOR), t);
}

TEST(TaskToken, RejectsMalformed) {
  const auto v = fixture_vocab();
  auto s = encode_patient(fixtures::three_visit_record(), v, 24);
  s.ids[s.true_length - 1] = tokens::VE;
  EXPECT_THROW(apply_task_token(s, TaskKind::LOS), DataError);
}

TEST(Properties, RoundTripAndValidityOnGeneratedCohort) {
  GeneratorConfig g;
  g.n_patients = 200;
  const auto cohort = generate_cohort(g);
  const auto binner = LabBinner::fit(cohort);
  std::vector<PatientRecord> binned;
  for (const auto& r : cohort) binned.push_back(binner.apply(r));
  const auto v = Vocabulary::build(catalog_from_records(binned));
  for (const auto& r : binned) {
    const auto s = encode_patient(r, v, 512);
    ASSERT_FALSE(check_sequence(s).has_value()) << *check_sequence(s);
    const auto visits = decode_visits(s, v);
    ASSERT_EQ(visits.size(), r.visits.size());
    for (std::size_t k = 0; k < visits.size(); ++k) {
      std::vector<std::string> want;
      for (const auto& e : r.visits[k].events) want.push_back(e.code);
      EXPECT_EQ(visits[k], want);
    }
    const auto truncated = encode_patient(r, v, 40);
    EXPECT_FALSE(check_sequence(truncated).has_value());
  }
}

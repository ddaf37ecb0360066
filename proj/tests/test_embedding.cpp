#include <gtest/gtest.h>

#include <cmath>

#include "ehrmamba/embedding.hpp"
#include "ehrmamba/ehr_data.hpp"
#include "fixtures.hpp"

using namespace ehrmamba;

namespace {

constexpr std::size_t kD = 8, kK = 4, kL = 24;

EmbeddingTables random_tables(std::uint64_t seed, bool use_position = false) {
  Rng rng(seed);
  return init_embedding_tables(40, kD, kK, 5, kL, use_position, rng);
}

EmbeddingTables zero_tables(const EmbeddingTables& like) {
  EmbeddingTables z = like;
  for (Matrix* m : {&z.concepts, &z.type, &z.segment, &z.visit_order, &z.position, &z.age_proj, &z.time_proj}) m->fill(0.0);
  return z;
}

PatientSequence fixture_sequence() {
  auto catalog = fixtures::small_catalog();
  const auto v = Vocabulary::build(catalog);
  return encode_patient(fixtures::three_visit_record(), v, kL);
}

}  // namespace

TEST(Time2Vec, ZeroParameters) {
  Time2VecParams p{Matrix(1, kK), Matrix(1, kK)};
  for (double x : time2vec(3.7, p)) EXPECT_EQ(x, 0.0);
}

TEST(Time2Vec, ZeroInputGivesPhases) {
  Rng rng(1);
  Time2VecParams p{Matrix(1, kK), Matrix(1, kK)};
  fill_uniform(p.omega, rng, 0.1, 1.0);
  fill_uniform(p.phi, rng, 0.0, 6.0);
  const auto f = time2vec(0.0, p);
  EXPECT_EQ(f[0], p.phi[0]);
  for (std::size_t i = 1; i < kK; ++i) EXPECT_EQ(f[i], std::sin(p.phi[i]));
}

TEST(Time2Vec, MatchesExtendedPrecisionFormula) {
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    Time2VecParams p{Matrix(1, kK), Matrix(1, kK)};
    fill_uniform(p.omega, rng, -1.0, 1.0);
    fill_uniform(p.phi, rng, -3.0, 3.0);
    const double t = 100.0 * uniform01(rng);
    const auto f = time2vec(t, p);
    const long double lt = t;
    EXPECT_NEAR(f[0], static_cast<double>(p.omega[0] * lt + p.phi[0]), 1e-12);
    for (std::size_t i = 1; i < kK; ++i) {
      EXPECT_NEAR(f[i], static_cast<double>(std::sin(static_cast<long double>(p.omega[i]) * lt + p.phi[i])), 1e-12);
    }
  }
}

TEST(Embedding, InitInvariants) {
  const auto t = random_tables(3);
  for (std::size_t j = 0; j < kD; ++j) {
    EXPECT_EQ(t.concepts(tokens::PAD, j), 0.0);
    EXPECT_EQ(t.segment(0, j), 0.0);
    EXPECT_EQ(t.visit_order(0, j), 0.0);
  }
  EXPECT_EQ(t.type.rows(), kTokenTypeCount);
  for (double w : t.age_t2v.omega.values()) {
    EXPECT_GE(w, 1e-2);
    EXPECT_LE(w, 1.0);
  }
}

TEST(Embedding, ZeroTablesGiveZeroMatrix) {
  const auto z = zero_tables(random_tables(4));
  const Matrix e = embed_sequence(fixture_sequence(), z);
  for (double x : e.values()) EXPECT_EQ(x, 0.0);
}

TEST(Embedding, SingleStreamEqualsConceptRow) {
  auto t = zero_tables(random_tables(5));
  Rng rng(9);
  fill_normal(t.concepts, rng, 1.0);
  PatientSequence s;
  s.push(33, TokenType::Lab, 50.0, 3.0, 1, 1);
  s.true_length = 1;
  const auto e = embed_sequence(s, t);
  for (std::size_t j = 0; j < kD; ++j) EXPECT_EQ(e(0, j), t.concepts(33, j));
}

TEST(Embedding, EqualsSumOfIndependentStreams) {
  const auto t = random_tables(6, true);
  const auto s = fixture_sequence();
  for (bool use_position : {false, true}) {
    const auto e = embed_sequence(s, t, use_position);
    for (std::size_t i = 0; i < kL; ++i) {
      for (std::size_t j = 0; j < kD; ++j) {
        double want = 0.0;
        if (i < s.true_length) {
          const auto id = static_cast<std::size_t>(s.ids[i]);
          want += t.concepts(id, j);
          want += t.type(static_cast<std::size_t>(s.types[i]), j);
          if (is_event_type(s.types[i])) {
            double age = 0.0, time = 0.0;
            for (std::size_t q = 0; q < kK; ++q) {
              const double fa = q == 0 ? t.age_t2v.omega[0] * s.ages[i] + t.age_t2v.phi[0]
                                       : std::sin(t.age_t2v.omega[q] * s.ages[i] + t.age_t2v.phi[q]);
              const double ft = q == 0 ? t.time_t2v.omega[0] * s.times[i] + t.time_t2v.phi[0]
                                       : std::sin(t.time_t2v.omega[q] * s.times[i] + t.time_t2v.phi[q]);
              age += fa * t.age_proj(q, j);
              time += ft * t.time_proj(q, j);
            }
            want += age + time;
            want += t.segment(static_cast<std::size_t>(s.segments[i]), j);
            want += t.visit_order(static_cast<std::size_t>(std::min(s.visit_orders[i], 5)), j);
          }
          if (use_position) want += t.position(i, j);
        }
        EXPECT_NEAR(e(i, j), want, 1e-12) << i << "," << j;
      }
    }
  }
}

TEST(Embedding, AdditiveInTables) {
  const auto a = random_tables(7);
  auto b = random_tables(8);
  b.age_t2v = a.age_t2v;
  b.time_t2v = a.time_t2v;
  auto sum = a;
  auto add = [](Matrix& x, const Matrix& y) {
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];
  };
  add(sum.concepts, b.concepts);
  add(sum.type, b.type);
  add(sum.segment, b.segment);
  add(sum.visit_order, b.visit_order);
  add(sum.age_proj, b.age_proj);
  add(sum.time_proj, b.time_proj);
  const auto s = fixture_sequence();
  const auto ea = embed_sequence(s, a), eb = embed_sequence(s, b), es = embed_sequence(s, sum);
  for (std::size_t i = 0; i < es.size(); ++i) EXPECT_NEAR(es[i], ea[i] + eb[i], 1e-12);
}

TEST(Embedding, PaddingRowsZeroAndPositionStreamIgnored) {
  const auto t = random_tables(10);
  auto s = fixture_sequence();
  const auto e = embed_sequence(s, t);
  for (std::size_t i = s.true_length; i < kL; ++i) {
    for (std::size_t j = 0; j < kD; ++j) EXPECT_EQ(e(i, j), 0.0);
  }
  for (std::size_t i = 0; i < s.true_length; ++i) s.positions[i] = static_cast<int>(kL - 1 - i);
  EXPECT_EQ(embed_sequence(s, t), e);
}

TEST(Embedding, VisitOrderClampsAndIdChecked) {
  const auto t = random_tables(11);
  auto s = fixture_sequence();
  s.visit_orders[2] = 500;
  auto clamped = s;
  clamped.visit_orders[2] = 5;
  EXPECT_EQ(embed_sequence(s, t), embed_sequence(clamped, t));
  s.ids[2] = 40;
  EXPECT_THROW(embed_sequence(s, t), ShapeError);
}

#include <gtest/gtest.h>

#include <cmath>

#include "ehrmamba/model.hpp"
#include "fixtures.hpp"

using namespace ehrmamba;

namespace {

Vocabulary vocab50() {
  auto catalog = fixtures::small_catalog();
  for (int i = 0; i < 16; ++i) catalog.push_back({"x_" + std::to_string(i), EventKind::Medication});
  return Vocabulary::build(catalog);
}

ModelConfig small_config(std::size_t l_c = 32) {
  ModelConfig c;
  c.d = 16;
  c.n_blocks = 2;
  c.vocab_size = 50;
  c.context_length = l_c;
  c.seed = 3;
  return c;
}

PatientSequence fixture_sequence(std::size_t l_c = 32) {
  return encode_patient(fixtures::three_visit_record(), vocab50(), l_c);
}

std::vector<double> flatten(const Model& m) {
  std::vector<double> out;
  for_each_parameter(m, [&](const std::string&, const Matrix& x) { out.insert(out.end(), x.values().begin(), x.values().end()); });
  return out;
}

}  // namespace

TEST(InitModel, ParameterCensus) {
  // d = 16, 2 blocks, v = 50, N = 16, K = 4, k = 32, V_max = 64, d_inner = 32, R = 1
  //   embeddings  800 + 144 + 48 + 1040 + 2 * (32 + 32 + 512)   = 3184
  //   per block   16 + 512 + 512 + 128 + 1056 + 32 + 32 + 512 + 512 = 3312
  //   heads       16 + 800 + 50 + 16 + 1                         = 883
  const auto cfg = small_config();
  const Model m = init_model(cfg);
  EXPECT_EQ(parameter_count(m), 3184u + 2u * 3312u + 883u);
  EXPECT_EQ(expected_parameter_count(cfg), parameter_count(m));
  auto pos = cfg;
  pos.use_position = true;
  EXPECT_EQ(parameter_count(init_model(pos)), parameter_count(m) + 32u * 16u);
  EXPECT_EQ(expected_parameter_count(pos), parameter_count(m) + 32u * 16u);
}

TEST(InitModel, DeterministicAndInvariant) {
  const auto cfg = small_config();
  const Model a = init_model(cfg), b = init_model(cfg);
  EXPECT_EQ(flatten(a), flatten(b));
  auto other = cfg;
  other.seed = 4;
  EXPECT_NE(flatten(init_model(other)), flatten(a));
  EXPECT_EQ(a.blocks.size(), 2u);
  for (double v : a.head_bias.values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(a.clf_bias[0], 0.0);
  int clf = 0;
  for_each_parameter(a, [&](const std::string& name, const Matrix&) { clf += name.rfind("clf.", 0) == 0; });
  EXPECT_EQ(clf, 2);
  for (std::size_t j = 0; j < cfg.d; ++j) EXPECT_EQ(a.tables.concepts(tokens::PAD, j), 0.0);
}

TEST(InitModel, RejectsInvalidConfig) {
  auto c = small_config();
  c.dropout = 1.0;
  EXPECT_THROW(init_model(c), ConfigError);
  c = small_config();
  c.d = 0;
  EXPECT_THROW(init_model(c), ConfigError);
  c = small_config();
  c.vocab_size = 10;
  EXPECT_THROW(init_model(c), ConfigError);
}

TEST(Forward, EmptyStackIsEmbedding) {
  auto cfg = small_config();
  cfg.n_blocks = 0;
  const Model m = init_model(cfg);
  const auto s = fixture_sequence();
  EXPECT_EQ(forward(m, {s})[0], embed_sequence(s, m.tables));
}

TEST(Forward, EvalDeterministicTrainSeeded) {
  const Model m = init_model(small_config());
  const auto s = fixture_sequence();
  EXPECT_EQ(forward(m, {s, s}, Mode::Eval)[0], forward(m, {s}, Mode::Eval)[0]);
  EXPECT_EQ(forward(m, {s}, Mode::Train, 5)[0], forward(m, {s}, Mode::Train, 5)[0]);
  EXPECT_NE(forward(m, {s}, Mode::Train, 5)[0], forward(m, {s}, Mode::Train, 6)[0]);
  EXPECT_NE(forward(m, {s}, Mode::Train, 5)[0], forward(m, {s}, Mode::Eval)[0]);
}

TEST(Forward, ShapeContractAndErrors) {
  const Model m = init_model(small_config());
  const auto H = forward(m, {fixture_sequence()});
  EXPECT_EQ(H[0].rows(), 32u);
  EXPECT_EQ(H[0].cols(), 16u);
  EXPECT_THROW(forward(m, {fixture_sequence(24)}), ShapeError);
  EXPECT_THROW(hidden_states<double>(m, fixture_sequence(40), 40), ShapeError);
}

TEST(Forward, CausalEndToEnd) {
  const Model m = init_model(small_config());
  const auto s = fixture_sequence();
  const Matrix H = forward(m, {s})[0];
  for (std::size_t t : {2u, 8u, 14u}) {
    auto p = s;
    p.ids[t] = 40;
    p.ages[t] += 3.0;
    const Matrix P = forward(m, {p})[0];
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t j = 0; j < 16; ++j) ASSERT_EQ(P(i, j), H(i, j));
    }
    EXPECT_GT(std::fabs(P(t, 0) - H(t, 0)) + std::fabs(P(t, 1) - H(t, 1)), 0.0);
  }
}

TEST(Forward, RecurrentMatchesParallel) {
  const Model m = init_model(small_config());
  const auto s = fixture_sequence();
  EXPECT_LE(max_abs_diff(recurrent_hidden_states(m, s, 32), hidden_states<double>(m, s, 32)), 1e-12);
}

TEST(ForecastingHead, UniformOnZeroInputs) {
  Model m = init_model(small_config());
  m.head_out.fill(0.0);
  const Matrix p = forecasting_head(m, Matrix(4, 16));
  for (double v : p.values()) EXPECT_NEAR(v, 1.0 / 50.0, 1e-15);
}

TEST(ForecastingHead, NormalizedAndArgmaxOfLogits) {
  Model m = init_model(small_config());
  Rng rng(1);
  fill_normal(m.head_bias, rng, 2.0);
  const Matrix H = forward(m, {fixture_sequence()})[0];
  const Matrix p = forecasting_head(m, H), z = forecast_logits(m, H);
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double sum = 0.0;
    std::size_t pa = 0, za = 0;
    for (std::size_t j = 0; j < p.cols(); ++j) {
      EXPECT_GE(p(i, j), 0.0);
      sum += p(i, j);
      if (p(i, j) > p(i, pa)) pa = j;
      if (z(i, j) > z(i, za)) za = j;
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
    EXPECT_EQ(pa, za);
  }
}

TEST(PredictionHead, ZeroWeightsGiveHalf) {
  Model m = init_model(small_config());
  m.clf_weight.fill(0.0);
  const auto s = apply_task_token(fixture_sequence(), TaskKind::MOR);
  EXPECT_EQ(predict(m, s), 0.5);
}

TEST(PredictionHead, ReadsLastRealRowOnly) {
  Model m = init_model(small_config());
  m.clf_bias[0] = 0.3;
  const auto s = apply_task_token(fixture_sequence(), TaskKind::LOS);
  Matrix H = forward(m, {s})[0];
  const double y = prediction_head(m, H, s);
  EXPECT_GT(y, 0.0);
  EXPECT_LT(y, 1.0);
  for (std::size_t i = 0; i < H.rows(); ++i) {
    if (i == s.true_length - 1) continue;
    for (std::size_t j = 0; j < 16; ++j) H(i, j) = 7.0;
  }
  EXPECT_EQ(prediction_head(m, H, s), y);
  for (std::size_t j = 0; j < 16; ++j) H(s.true_length - 1, j) = 0.0;
  EXPECT_EQ(prediction_head(m, H, s), sigmoid(0.3));
}

TEST(PredictionHead, MonotoneInLogitAndEmptyRejected) {
  Model m = init_model(small_config());
  const auto s = apply_task_token(fixture_sequence(), TaskKind::REA);
  const Matrix H = forward(m, {s})[0];
  double prev = 0.0;
  for (double b = -5.0; b <= 5.0; b += 0.5) {
    m.clf_bias[0] = b;
    const double y = prediction_head(m, H, s);
    EXPECT_GT(y, prev);
    prev = y;
  }
  PatientSequence empty = s;
  empty.true_length = 0;
  EXPECT_THROW(prediction_head(m, H, empty), DataError);
}

TEST(ForecastTokens, ConstantArgmax) {
  Model m = init_model(small_config());
  m.head_out.fill(0.0);
  m.head_bias[7] = 10.0;
  const auto s = fixture_sequence();
  const auto v = vocab50();
  for (auto mode : {DecodeMode::Recurrent, DecodeMode::Rerun}) {
    EXPECT_EQ(forecast_tokens(m, s, 6, &v, mode), std::vector<TokenId>(6, 7));
  }
  EXPECT_TRUE(forecast_tokens(m, s, 0).empty());
}

TEST(ForecastTokens, PadNeverEmitted) {
  Model m = init_model(small_config());
  m.head_out.fill(0.0);
  m.head_bias[tokens::PAD] = 50.0;
  m.head_bias[12] = 1.0;
  EXPECT_EQ(forecast_tokens(m, fixture_sequence(), 3), std::vector<TokenId>(3, 12));
}

TEST(ForecastTokens, OverflowRejected) {
  const Model m = init_model(small_config());
  const auto s = fixture_sequence();  // 17 real tokens in 32
  EXPECT_NO_THROW(forecast_tokens(m, s, 15));
  EXPECT_THROW(forecast_tokens(m, s, 16), ArgumentError);
  PatientSequence empty = s;
  empty.true_length = 0;
  EXPECT_THROW(forecast_tokens(m, empty, 1), DataError);
}

TEST(ForecastTokens, RecurrentAndRerunAgree) {
  const auto v = vocab50();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto cfg = small_config();
    cfg.seed = seed;
    Model m = init_model(cfg);
    Rng rng(seed);
    fill_normal(m.head_out, rng, 1.0);
    const auto s = fixture_sequence();
    EXPECT_EQ(forecast_tokens(m, s, 10, &v, DecodeMode::Recurrent), forecast_tokens(m, s, 10, &v, DecodeMode::Rerun));
  }
}

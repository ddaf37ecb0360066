#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "ehrmamba/checkpoint.hpp"

using namespace ehrmamba;

namespace {

ModelConfig config(std::size_t d = 8) {
  ModelConfig c;
  c.d = d;
  c.n_blocks = 2;
  c.state_size = 4;
  c.time_width = 4;
  c.context_length = 16;
  c.vocab_size = 40;
  c.seed = 12;
  return c;
}

std::filesystem::path temp_dir() {
  auto p = std::filesystem::temp_directory_path() / ("ehrmamba_ckpt_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()));
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExactAtStoredPrecision) {
  const Model m = init_model(config());
  const auto bytes = serialize_checkpoint(m, {{"note", "x"}});
  const auto ck = deserialize_checkpoint(bytes);
  EXPECT_EQ(ck.metadata.at("note"), "x");
  std::vector<const Matrix*> a;
  for_each_parameter(m, [&](const std::string&, const Matrix& x) { a.push_back(&x); });
  std::size_t i = 0;
  for_each_parameter(ck.model, [&](const std::string& name, const Matrix& x) {
    const Matrix& orig = *a[i++];
    ASSERT_TRUE(x.same_shape(orig)) << name;
    for (std::size_t k = 0; k < x.size(); ++k) {
      ASSERT_EQ(x[k], static_cast<double>(static_cast<float>(orig[k]))) << name << "[" << k << "]";
    }
  });
  EXPECT_EQ(serialize_checkpoint(ck.model, {{"note", "x"}}), bytes);
}

TEST(Checkpoint, FileRoundTrip) {
  const auto dir = temp_dir();
  const Model m = init_model(config());
  save_checkpoint(m, dir / "m.ckpt");
  const auto ck = load_checkpoint(dir / "m.ckpt");
  const auto cfg = config();
  EXPECT_EQ(serialize_checkpoint(load_checkpoint(dir / "m.ckpt", &cfg).model), serialize_checkpoint(ck.model));
  EXPECT_EQ(read_file_bytes(dir / "m.ckpt"), serialize_checkpoint(m));
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, BadMagicRejected) {
  auto bytes = serialize_checkpoint(init_model(config()));
  bytes[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bytes), FormatError);
}

TEST(Checkpoint, TruncationDetected) {
  const auto bytes = serialize_checkpoint(init_model(config()));
  for (std::size_t cut : {bytes.size() - 1, bytes.size() / 2, std::size_t{10}}) {
    std::vector<char> partial(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_THROW(deserialize_checkpoint(partial), FormatError) << cut;
  }
}

TEST(Checkpoint, VersionMismatchRejected) {
  auto bytes = serialize_checkpoint(init_model(config()));
  bytes[4] = 2;
  try {
    deserialize_checkpoint(bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}

TEST(Checkpoint, LargerConfigNamesTensor) {
  const auto bytes = serialize_checkpoint(init_model(config(8)));
  const auto bigger = config(16);
  try {
    deserialize_checkpoint(bytes, &bigger);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("'emb.concepts'"), std::string::npos) << e.what();
  }
  auto positional = config(8);
  positional.use_position = true;
  EXPECT_THROW(deserialize_checkpoint(bytes, &positional), FormatError);
}

TEST(Checkpoint, MetadataCarriesConfig) {
  auto c = config();
  c.dropout = 0.25;
  c.use_position = true;
  const auto ck = deserialize_checkpoint(serialize_checkpoint(init_model(c)));
  EXPECT_EQ(ck.model.config.d, c.d);
  EXPECT_EQ(ck.model.config.dropout, 0.25);
  EXPECT_TRUE(ck.model.config.use_position);
  EXPECT_EQ(ck.model.config.seed, c.seed);
}

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "ehrmamba/config.hpp"
#include "ehrmamba/pipeline.hpp"

using namespace ehrmamba;

namespace {

std::filesystem::path write_temp(const std::string& name, const std::string& text) {
  const auto p = std::filesystem::temp_directory_path() / name;
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST(Config, EmptyFileGivesDefaults) {
  const auto p = write_temp("ehrmamba_empty.cfg", "");
  RunConfig want;
  validate_config(want);
  EXPECT_EQ(echo_config(parse_config(p)), echo_config(want));
  EXPECT_EQ(parse_config({}).model.d, 64u);
  EXPECT_EQ(parse_config({}).pretrain.epochs, 5u);
}

TEST(Config, OverrideBeatsFile) {
  const auto p = write_temp("ehrmamba_d.cfg", "# comment\nmodel.d = 64\n\nseed=3\n");
  const auto c = parse_config(p, {"model.d=32"});
  EXPECT_EQ(c.model.d, 32u);
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.model.seed, 3u);
  EXPECT_EQ(parse_config(p).model.d, 64u);
}

TEST(Config, EchoReparsesToSameConfig) {
  const auto p = write_temp("ehrmamba_mix.cfg",
                            "model.dropout=0.2\nfinetune.tasks=MOR,C2\npretrain.peak_lr=0.00123456789\n"
                            "model.use_position=true\nsplit.pretrain=0.5\nsplit.finetune=0.3\nsplit.test=0.2\n"
                            "path.workdir=/tmp/x\nattribute.task=LOS\n");
  const auto c = parse_config(p);
  const auto again = parse_config(write_temp("ehrmamba_echo.cfg", echo_config(c)));
  EXPECT_EQ(echo_config(again), echo_config(c));
  EXPECT_EQ(config_hash(again), config_hash(c));
  EXPECT_EQ(again.pretrain.peak_lr, 0.00123456789);
  EXPECT_EQ(again.finetune.tasks, (std::vector<TaskKind>{TaskKind::MOR, TaskKind::C2}));
  EXPECT_EQ(again.ig_task, TaskKind::LOS);
}

TEST(Config, ErrorsNameTheKey) {
  auto message = [](const std::vector<std::string>& overrides) {
    try {
      parse_config({}, overrides);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_NE(message({"model.depth=3"}).find("model.depth"), std::string::npos);
  EXPECT_NE(message({"model.d=abc"}).find("model.d"), std::string::npos);
  EXPECT_NE(message({"model.use_position=maybe"}).find("model.use_position"), std::string::npos);
  EXPECT_NE(message({"finetune.tasks=MOR,XYZ"}).find("finetune.tasks"), std::string::npos);
  EXPECT_NE(message({"model.dropout=1.5"}).find("dropout"), std::string::npos);
  EXPECT_FALSE(message({"split.test=0.5"}).empty());
  EXPECT_FALSE(message({"novalue"}).empty());
  EXPECT_THROW(parse_config("/nonexistent/file.cfg"), ConfigError);
  EXPECT_THROW(pipeline::workdir(parse_config({})), ConfigError);
}

TEST(Config, HashAndHeader) {
  const auto a = parse_config({}), b = parse_config({}, {"seed=8"});
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a), config_hash(parse_config({})));
  const auto h = artifact_header(a, "evaluate");
  EXPECT_EQ(h.rfind("# ehrmamba ", 0), 0u);
  EXPECT_NE(h.find("# config_hash=" + config_hash(a)), std::string::npos);
  EXPECT_NE(h.find("# model.d=64"), std::string::npos);
}

TEST(Config, EveryKeyDocumented) {
  const auto ref = config_reference();
  for (const auto& k : config_keys()) {
    EXPECT_FALSE(k.doc.empty()) << k.key;
    EXPECT_NE(ref.find("\n" + k.key + "="), std::string::npos) << k.key;
  }
}

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "seamforge/config.hpp"
#include "seamforge/experiments.hpp"

using namespace seamforge;
using nlohmann::json;

namespace {

std::string config_error(const json& user) {
  try {
    parse_config(user);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

json tiny() {
  return json::parse(R"({
    "dataset": {"synthetic": {"train_per_class": 60, "test_per_class": 20, "pool_per_class": 120}},
    "model": {"hidden": [16]},
    "train": {"epochs": 2},
    "seam": {"for_fraction": 0.01, "n_for": 20, "n_rec": 5},
    "sweep_residual": {"samples": 1000, "ks": [100, 1000]},
    "sweep_recovery": {"fractions": [0.05, 0.1]},
    "polluted_recovery": {"ratios": [0, 0.01]},
    "revive": {"samples": 200, "ratios": [0, 0.05]},
    "ntk": {"samples_eval": 8, "samples_train": 8, "oracle": {"q": 8, "n": 4}},
    "cka": {"probe": 32}
  })");
}

}  // namespace

TEST(Config, DefaultsParse) {
  const auto c = parse_config(json::object());
  EXPECT_EQ(c.seeds, std::vector<std::uint64_t>{0});
  EXPECT_EQ(c.model.hidden, (std::vector<int>{256, 64}));
  EXPECT_DOUBLE_EQ(c.poison_rate, 0.1);
  EXPECT_DOUBLE_EQ(c.seam.for_fraction, 0.001);
  EXPECT_DOUBLE_EQ(c.seam.rec_fraction, 0.1);
  EXPECT_EQ(c.sweep_residual.train.max_epochs, 1u);
  EXPECT_FALSE(c.timing);
  EXPECT_EQ(c.resolved, default_config_json());
}

TEST(Config, UnknownKeysNamePointer) {
  EXPECT_NE(config_error({{"sweep_residual", {{"sampels", 3}}}}).find("/sweep_residual/sampels: unknown key"),
            std::string::npos);
  EXPECT_NE(config_error({{"bogus", 1}}).find("/bogus"), std::string::npos);
}

TEST(Config, TypeAndRangeErrorsNamePointer) {
  EXPECT_NE(config_error({{"train", {{"batch_size", 0}}}}).find("/train/batch_size"), std::string::npos);
  EXPECT_NE(config_error({{"train", {{"learning_rate", "fast"}}}}).find("/train/learning_rate: expected a number"),
            std::string::npos);
  EXPECT_NE(config_error({{"poison", {{"rate", 1.5}}}}).find("/poison/rate"), std::string::npos);
  EXPECT_NE(config_error({{"seeds", json::array()}}).find("/seeds: must not be empty"), std::string::npos);
  EXPECT_NE(config_error({{"seeds", {1, -2}}}).find("/seeds/1"), std::string::npos);
  EXPECT_NE(config_error({{"model", 5}}).find("/model: expected an object"), std::string::npos);
  EXPECT_NE(config_error({{"model", {{"kind", "resnet"}}}}).find("not one of"), std::string::npos);
}

TEST(Config, MissingPathsRejected) {
  EXPECT_NE(config_error({{"checkpoint", "/nonexistent/model.json"}}).find("/checkpoint"), std::string::npos);
}

TEST(Config, TriggerErrorsAreConfigErrors) {
  auto cfg = parse_config({{"trigger", {{"anchor_row", 6}}}});
  EXPECT_THROW(load_task(cfg, 0), ConfigError);
}

TEST(Override, DottedKeysParseJsonValues) {
  json u = json::object();
  apply_override(u, "seam.forget.learning_rate=0.5");
  apply_override(u, "seeds=[3,1]");
  apply_override(u, "experiment=run-a");
  apply_override(u, "timing=true");
  EXPECT_EQ(u["seam"]["forget"]["learning_rate"], 0.5);
  EXPECT_EQ(u["seeds"], json::array({3, 1}));
  EXPECT_EQ(u["experiment"], "run-a");
  EXPECT_EQ(u["timing"], true);
  const auto c = parse_config(u);
  EXPECT_DOUBLE_EQ(c.seam.seam.forget_train.learning_rate, 0.5);
  EXPECT_TRUE(c.timing);
}

TEST(Override, LaterAssignmentWins) {
  json u = json::object();
  apply_override(u, "train.epochs=2");
  apply_override(u, "train.epochs=4");
  EXPECT_EQ(parse_config(u).train.max_epochs, 4u);
}

TEST(Override, MalformedAssignmentRejected) {
  json u = json::object();
  EXPECT_THROW(apply_override(u, "no-equals-sign"), ConfigError);
  EXPECT_THROW(apply_override(u, "=3"), ConfigError);
}

TEST(ConfigFile, ReadsObjectsOnly) {
  const auto dir = std::filesystem::temp_directory_path() / "seamforge_harness_cfg";
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "ok.json") << R"({"experiment": "x"})";
  std::ofstream(dir / "array.json") << "[1, 2]";
  std::ofstream(dir / "broken.json") << "{\"a\": ";
  EXPECT_EQ(read_config_file(dir / "ok.json")["experiment"], "x");
  EXPECT_THROW(read_config_file(dir / "array.json"), ConfigError);
  EXPECT_THROW(read_config_file(dir / "broken.json"), ConfigError);
  EXPECT_THROW(read_config_file(dir / "absent.json"), ConfigError);
}

TEST(ResultRow, CsvLeavesUnsetColumnsEmpty) {
  ResultRow r;
  r.experiment = "e";
  r.seed = 4;
  r.phase = "forget";
  r.acc = 0.5;
  r.epochs = 3;
  EXPECT_EQ(to_csv({r}), std::string(kResultCsvHeader) + "\ne,4,forget,,0.5,,,3,,\n");
  const auto j = to_json(r);
  EXPECT_TRUE(j["asr"].is_null());
  EXPECT_EQ(j["epochs"], 3);
}

TEST(Commands, RowsSortedBySeedThenKey) {
  auto u = tiny();
  u["seeds"] = {2, 0, 2};
  const auto out = cmd_revive(parse_config(u));
  ASSERT_EQ(out.rows.size(), 6u);
  EXPECT_EQ(out.rows[0].seed, 0u);
  EXPECT_EQ(out.rows[0].phase, "unlearned");
  EXPECT_EQ(out.rows[3].seed, 2u);
  EXPECT_DOUBLE_EQ(*out.rows[5].key, 0.05);
  ASSERT_EQ(out.seeds.size(), 2u);
  EXPECT_EQ(out.seeds[1]["seed"], 2);
}

TEST(Commands, RepeatRunsAreIdentical) {
  const auto cfg = parse_config(tiny());
  for (const char* name : {"seam", "sweep-residual", "cka-report"}) {
    const auto a = run_command(name, cfg);
    const auto b = run_command(name, cfg);
    EXPECT_EQ(to_csv(a.rows), to_csv(b.rows)) << name;
    EXPECT_EQ(output_document(cfg, a).dump(), output_document(cfg, b).dump()) << name;
  }
}

TEST(Commands, SeedsAreIndependentOfTheSeedList) {
  auto u = tiny();
  u["seeds"] = {1};
  const auto one = cmd_seam(parse_config(u));
  u["seeds"] = {0, 1};
  const auto both = cmd_seam(parse_config(u));
  std::vector<ResultRow> tail(both.rows.begin() + static_cast<std::ptrdiff_t>(both.rows.size() / 2),
                              both.rows.end());
  EXPECT_EQ(to_csv(one.rows), to_csv(tail));
}

TEST(Commands, PollutionZeroMatchesSeam) {
  const auto cfg = parse_config(tiny());
  const auto seam = cmd_seam(cfg);
  const auto polluted = cmd_polluted_recovery(cfg);
  double seam_fid = -1.0;
  for (const auto& r : seam.rows)
    if (r.phase == "recover") seam_fid = *r.fid;
  EXPECT_DOUBLE_EQ(*polluted.rows.front().key, 0.0);
  EXPECT_DOUBLE_EQ(*polluted.rows.front().fid, seam_fid);
}

TEST(Commands, ResidualSweepNeedsEnoughSamples) {
  auto u = tiny();
  u["sweep_residual"]["samples"] = 5000;
  EXPECT_THROW(cmd_sweep_residual(parse_config(u)), InvalidArgument);
}

TEST(Commands, ResidualNormBoundedBySampleCount) {
  // Entries lie in [-1, 1]; the tiny source is far from confident, so no
  // closer relation to k holds here.
  const auto out = cmd_sweep_residual(parse_config(tiny()));
  ASSERT_EQ(out.rows.size(), 2u);
  for (const auto& r : out.rows) {
    EXPECT_GE(*r.value, 0.0);
    EXPECT_LE(*r.value, 1000.0);
  }
}

TEST(Commands, TimingOffLeavesSecondsEmpty) {
  const auto out = cmd_seam(parse_config(tiny()));
  for (const auto& r : out.rows) EXPECT_FALSE(r.seconds.has_value());
}

TEST(Commands, NtkSourceEqualsTargetHasZeroForgetting) {
  auto u = tiny();
  const auto dir = std::filesystem::temp_directory_path() / "seamforge_harness_ntk";
  u["out"] = dir.string();
  const auto cfg = parse_config(u);
  write_outputs(cfg, cmd_train(cfg));
  u["checkpoint"] = (dir / "checkpoints" / "train-seed0.json").string();
  u["ntk"]["target"] = u["checkpoint"];
  const auto out = cmd_ntk_report(parse_config(u));
  for (const auto& r : out.rows)
    if (r.phase == "cf-empirical") EXPECT_EQ(*r.value, 0.0);
  EXPECT_TRUE(out.seeds[0]["oracle"]["passed"].get<bool>());
}

TEST(Commands, CleanSetsOverlapRecoverySetMoreThanTriggeredOnes) {
  auto u = tiny();
  u["dataset"]["synthetic"] = {{"train_per_class", 300}, {"test_per_class", 60}, {"pool_per_class", 120}};
  u["model"]["hidden"] = {32};
  u["train"]["epochs"] = 5;
  u["ntk"]["samples_eval"] = 16;
  u["ntk"]["samples_train"] = 16;
  u["seeds"] = {0, 1, 2, 3, 4};
  const auto out = cmd_ntk_report(parse_config(u));
  for (const auto& s : out.seeds) {
    EXPECT_TRUE(s["recovery_similarity"]["clean_higher"].get<bool>()) << "seed " << s["seed"];
  }
}

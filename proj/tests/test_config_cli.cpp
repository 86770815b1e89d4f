#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "scdnet/commands.hpp"
#include "scdnet/config.hpp"

using namespace scdnet;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int rc;
  std::string out;  // stdout and stderr together
};

CliRun cli(const std::string& args) {
  const std::string cmd = std::string(SCDNET_CLI_PATH) + " " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return {-1, ""};
  std::string out;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) out.append(buf, n);
  const int status = pclose(p);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small enough that a one-epoch run takes well under a second.
constexpr const char* kTinyConfig = R"({
  "simulate": {"num_turns": 3, "segment_max": 2.0, "feature_dim": 8, "num_layers": 2},
  "model": {"hidden": 8, "blocks": 1, "heads": 2},
  "train": {"epochs": 1, "val_fraction": 0.34}
})";

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("scdnet_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    write_text(path("tiny.json"), kTinyConfig);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  std::string tiny() const { return "--config " + path("tiny.json"); }

  // Simulates `count` dialogues into data/ and trains into `out`.
  void simulate_and_train(const std::string& out, const std::string& extra = "", std::size_t count = 3) {
    ASSERT_EQ(cli("simulate " + tiny() + " --count " + std::to_string(count) + " --out " + path("data")).rc, 0);
    const CliRun r = cli("train " + tiny() + " --manifest " + path("data/manifest.txt") + " --out " + path(out) + " " + extra);
    ASSERT_EQ(r.rc, 0) << r.out;
  }

  fs::path dir_;
};

}  // namespace

TEST(Config, DefaultsAreDocumentedValues) {
  const RunConfig c = parse_run_config(std::string("{}"));
  EXPECT_DOUBLE_EQ(c.loss.alpha, 0.05);
  EXPECT_DOUBLE_EQ(c.detect.threshold, 0.35);
  EXPECT_DOUBLE_EQ(c.detect.min_gap, 0.2);
  EXPECT_EQ(c.train.batch_size, 1);
  EXPECT_EQ(c.model.blocks, 3);
  const auto j = to_json(c);
  EXPECT_EQ(parse_run_config(j).train.epochs, c.train.epochs);
}

TEST(Config, UnknownKeyIsNamed) {
  try {
    parse_run_config(std::string(R"({"train": {"epoch": 3}})"));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("train.epoch"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_run_config(std::string(R"({"optimizer": {}})")), ConfigError);
}

TEST(Config, WrongTypeAndRangeAreErrors) {
  try {
    parse_run_config(std::string(R"({"loss": {"alpha": "big"}})"));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("loss.alpha"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_run_config(std::string(R"({"loss": {"norm": "l3"}})")), ConfigError);
  EXPECT_THROW(parse_run_config(std::string(R"({"detect": {"threshold": 1.5}})")), ConfigError);
  EXPECT_THROW(parse_run_config(std::string("not json")), ConfigError);
  EXPECT_EQ(parse_run_config(std::string(R"({"loss": {"norm": "l1"}})")).loss.norm, NormKind::kL1);
}

TEST_F(CliTest, DefaultsSubcommandPrintsJson) {
  const CliRun r = cli("defaults");
  ASSERT_EQ(r.rc, 0) << r.out;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_DOUBLE_EQ(j["loss"]["alpha"].get<double>(), 0.05);
}

TEST_F(CliTest, ConfigErrorsExitWithTwo) {
  write_text(path("bad.json"), R"({"train": {"epoch": 3}})");
  const CliRun r = cli("defaults --config " + path("bad.json"));
  EXPECT_EQ(r.rc, 2);
  EXPECT_NE(r.out.find("train.epoch"), std::string::npos) << r.out;
  EXPECT_EQ(cli("simulate --count notanumber").rc, 2);
  EXPECT_EQ(cli("frobnicate").rc, 2);
}

TEST_F(CliTest, SimulateWritesManifest) {
  ASSERT_EQ(cli("simulate " + tiny() + " --count 3 --out " + path("data")).rc, 0);
  const auto m = read_manifest(path("data/manifest.txt"));
  ASSERT_EQ(m.size(), 3u);
  for (const auto& e : m) {
    EXPECT_TRUE(fs::exists(e.features));
    EXPECT_TRUE(fs::exists(e.rttm));
  }
  ASSERT_EQ(cli("simulate " + tiny() + " --count 0 --out " + path("empty")).rc, 0);
  EXPECT_TRUE(read_manifest(path("empty/manifest.txt")).empty());
}

TEST_F(CliTest, SimulateIsSeeded) {
  ASSERT_EQ(cli("simulate " + tiny() + " --count 1 --seed 5 --out " + path("a")).rc, 0);
  ASSERT_EQ(cli("simulate " + tiny() + " --count 1 --seed 5 --out " + path("b")).rc, 0);
  ASSERT_EQ(cli("simulate " + tiny() + " --count 1 --seed 6 --out " + path("c")).rc, 0);
  EXPECT_EQ(slurp(path("a/dialogue_000.scdf")), slurp(path("b/dialogue_000.scdf")));
  EXPECT_NE(slurp(path("a/dialogue_000.scdf")), slurp(path("c/dialogue_000.scdf")));
}

TEST_F(CliTest, LabelWritesCsvFiles) {
  ASSERT_EQ(cli("simulate " + tiny() + " --count 1 --out " + path("data")).rc, 0);
  const CliRun r = cli("label " + tiny() + " --rttm " + path("data/dialogue_000.rttm") + " --features " +
                    path("data/dialogue_000.scdf") + " --triplets --out " + path("lab"));
  ASSERT_EQ(r.rc, 0) << r.out;
  const std::string labels = slurp(path("lab/dialogue_000.labels.csv"));
  EXPECT_EQ(labels.rfind("frame_index,value\n", 0), 0u);
  EXPECT_EQ(slurp(path("lab/dialogue_000.triplets.csv")).rfind("anchor,positive,negative_or_RAND\n", 0), 0u);
  EXPECT_EQ(cli("label --rttm " + path("missing.rttm") + " --out " + path("lab")).rc, 1);
}

TEST_F(CliTest, TrainWritesLogAndIsReproducible) {
  simulate_and_train("run1");
  const CliRun again = cli("train " + tiny() + " --manifest " + path("data/manifest.txt") + " --out " + path("run2"));
  ASSERT_EQ(again.rc, 0) << again.out;
  EXPECT_EQ(slurp(path("run1/model.scdn")), slurp(path("run2/model.scdn")));

  std::ifstream log(path("run1/train_log.jsonl"));
  std::string line;
  std::vector<nlohmann::json> lines;
  while (std::getline(log, line)) lines.push_back(nlohmann::json::parse(line));
  ASSERT_EQ(lines.size(), 2u);
  for (const char* k : {"epoch", "loss", "classification", "contrastive", "val_f1"}) {
    EXPECT_TRUE(lines[0].contains(k)) << k;
  }
  EXPECT_EQ(lines[1]["best_epoch"], 1);
}

TEST_F(CliTest, TrainWithoutContrastiveTerm) {
  simulate_and_train("run", "--alpha 0");
  std::ifstream log(path("run/train_log.jsonl"));
  std::string line;
  std::getline(log, line);
  const auto j = nlohmann::json::parse(line);
  EXPECT_DOUBLE_EQ(j["loss"].get<double>(), j["classification"].get<double>());
  EXPECT_EQ(cli("train " + tiny() + " --manifest " + path("data/manifest.txt") + " --alpha -1 --out " + path("x")).rc, 2);
}

TEST_F(CliTest, InferEvalAndThresholdOverride) {
  simulate_and_train("run");
  const std::string ck = " --checkpoint " + path("run/model.scdn") + " --manifest " + path("data/manifest.txt");
  const CliRun low = cli("infer " + tiny() + ck + " --threshold 0.01 --out " + path("low"));
  ASSERT_EQ(low.rc, 0) << low.out;
  const CliRun high = cli("infer " + tiny() + ck + " --threshold 0.999 --out " + path("high"));
  ASSERT_EQ(high.rc, 0) << high.out;
  std::ifstream lf(path("low/hypothesis.csv")), hf(path("high/hypothesis.csv"));
  std::size_t nlow = 0, nhigh = 0;
  for (const auto& [id, cp] : read_points_csv(lf)) nlow += cp.times.size();
  for (const auto& [id, cp] : read_points_csv(hf)) nhigh += cp.times.size();
  EXPECT_GE(nlow, nhigh);
  EXPECT_GT(nlow, 0u);
  ASSERT_EQ(cli("infer " + tiny() + ck + " --threshold 0.01 --out " + path("low2")).rc, 0);
  EXPECT_EQ(slurp(path("low/hypothesis.csv")), slurp(path("low2/hypothesis.csv")));

  const CliRun ev = cli("eval " + tiny() + " --hypothesis " + path("low/hypothesis.csv") + " --manifest " +
                     path("data/manifest.txt") + " --out " + path("ev"));
  ASSERT_EQ(ev.rc, 0) << ev.out;
  const auto rep = nlohmann::json::parse(slurp(path("ev/report.json")));
  EXPECT_EQ(rep["files"].size(), 3u);
  EXPECT_EQ(cli("infer " + tiny() + ck + " --threshold 1.5 --out " + path("bad")).rc, 2);
}

TEST_F(CliTest, EvalOfReferenceAgainstItselfIsPerfect) {
  ASSERT_EQ(cli("simulate " + tiny() + " --count 3 --out " + path("data")).rc, 0);
  HypothesisPoints pts;
  for (const auto& e : read_manifest(path("data/manifest.txt"))) {
    pts[e.id] = derive_change_points(read_rttm_file(e.rttm));
  }
  {
    std::ofstream f(path("ref.csv"));
    write_points_csv(pts, f);
  }
  const CliRun r = cli("eval " + tiny() + " --hypothesis " + path("ref.csv") + " --manifest " +
                    path("data/manifest.txt") + " --out " + path("ev"));
  ASSERT_EQ(r.rc, 0) << r.out;
  const auto rep = nlohmann::json::parse(slurp(path("ev/report.json")));
  EXPECT_NEAR(rep["f1"].get<double>(), 1.0, 1e-9);

  write_text(path("stray.csv"), "file_id,time_seconds\nnot_a_file,1.0\n");
  const CliRun bad = cli("eval " + tiny() + " --hypothesis " + path("stray.csv") + " --manifest " +
                      path("data/manifest.txt") + " --out " + path("ev2"));
  EXPECT_EQ(bad.rc, 1);
  EXPECT_NE(bad.out.find("not_a_file"), std::string::npos) << bad.out;
}

TEST_F(CliTest, InspectWeightsAtInitialisation) {
  simulate_and_train("run", "--epochs 0");
  const CliRun r = cli("inspect-weights --checkpoint " + path("run/model.scdn") + " --json --out " + path("w"));
  ASSERT_EQ(r.rc, 0) << r.out;
  const auto j = nlohmann::json::parse(slurp(path("w/weights.json")));
  EXPECT_FALSE(j["fusion_bypassed"].get<bool>());
  double sum = 0.0;
  for (const auto& l : j["layers"]) {
    EXPECT_NEAR(l["weight"].get<double>(), 0.5, 1e-12);
    sum += l["weight"].get<double>();
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST_F(CliTest, InspectWeightsSingleLayerNotesBypass) {
  write_text(path("tiny.json"), R"({"simulate": {"num_turns": 3, "feature_dim": 4, "num_layers": 1},
    "model": {"hidden": 8, "blocks": 1, "heads": 2}, "train": {"epochs": 0}})");
  simulate_and_train("run", "", 2);
  const CliRun r = cli("inspect-weights --checkpoint " + path("run/model.scdn") + " --json --out " + path("w"));
  ASSERT_EQ(r.rc, 0) << r.out;
  const auto j = nlohmann::json::parse(slurp(path("w/weights.json")));
  EXPECT_TRUE(j["fusion_bypassed"].get<bool>());
  EXPECT_EQ(j["note"], "fusion bypassed");
}

TEST_F(CliTest, RuntimeErrorsExitWithOne) {
  EXPECT_EQ(cli("inspect-weights --checkpoint " + path("nope.scdn")).rc, 1);
  simulate_and_train("run");
  write_text(path("other.json"), R"({"simulate": {"num_turns": 2, "feature_dim": 5, "num_layers": 2}})");
  ASSERT_EQ(cli("simulate --config " + path("other.json") + " --count 1 --out " + path("other")).rc, 0);
  const CliRun r = cli("infer --checkpoint " + path("run/model.scdn") + " --features " + path("other/dialogue_000.scdf") +
                    " --out " + path("inf"));
  EXPECT_EQ(r.rc, 1);
  EXPECT_NE(r.out.find("5"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("8"), std::string::npos) << r.out;
}

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "dualswin/cli.hpp"

namespace dualswin {
namespace {

namespace fs = std::filesystem;

const fs::path kTiny = fs::path(DUALSWIN_SOURCE_DIR) / "configs" / "tiny.cfg";

struct Result {
  int code;
  std::string out, err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "dualswin");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::path(::testing::TempDir()) / name;
  fs::remove_all(p);
  return p;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::istringstream is(line);
  for (std::string c; std::getline(is, c, ',');) cells.push_back(c);
  return cells;
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(invoke({}).code, 2);
  EXPECT_EQ(invoke({"frobnicate"}).code, 2);
  EXPECT_EQ(invoke({"train", "--no-such-flag"}).code, 2);
  EXPECT_EQ(invoke({"ablate", "--suite", "everything"}).code, 2);
  EXPECT_EQ(invoke({"train", "--config", "/no/such/file.cfg"}).code, 2);
}

TEST(Cli, MissingDatasetWithoutSyntheticIsUsageError) {
  const Result r = invoke({"train", "--out", fresh_dir("cli_nodata").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--data"), std::string::npos);
}

TEST(Cli, RuntimeFailureExitsOne) {
  const Result r = invoke({"eval", "--config", kTiny.string(), "--checkpoint", kTiny.string()});
  EXPECT_EQ(r.code, 1);
}

TEST(Cli, PrintConfigAppliesOverridesAndRoundTrips) {
  const Result r = invoke({"print-config", "--config", kTiny.string(), "--seed", "7"});
  ASSERT_EQ(r.code, 0);
  const Config c = parse_config(r.out);
  EXPECT_EQ(c.train.seed, 7u);
  EXPECT_EQ(c.model.img_size, load_config(kTiny.string()).model.img_size);
}

TEST(Cli, TrainWritesCheckpointAndHistory) {
  const fs::path out = fresh_dir("cli_train");
  const Result r = invoke({"train", "--config", kTiny.string(), "--synthetic", "--count", "8", "--epochs", "11",
                           "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"checkpoint_last.bin", "checkpoint_best.bin", "history.csv", "config.cfg", "split.csv"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
}

TEST(Cli, EvalOfGroundTruthAsPredictionScoresOne) {
  const fs::path data = fresh_dir("cli_synth");
  ASSERT_EQ(invoke({"synth", "--config", kTiny.string(), "--count", "5", "--out", data.string()}).code, 0);
  EXPECT_TRUE(fs::exists(data / "manifest.csv"));
  const Result r = invoke({"eval", "--config", kTiny.string(), "--data", data.string(), "--pred", data.string(),
                           "--split", "all", "--out", fresh_dir("cli_eval").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream lines(r.out);
  std::string header, row;
  std::getline(lines, header);
  const auto cols = split_csv(header);
  int rows = 0;
  while (std::getline(lines, row)) {
    const auto cells = split_csv(row);
    for (std::size_t k = 0; k < cols.size(); ++k) {
      if (cols[k] == "jaccard" || cols[k] == "dice" || cols[k] == "f1") EXPECT_DOUBLE_EQ(std::stod(cells[k]), 1.0);
      if (cols[k] == "fp" || cols[k] == "fn") EXPECT_DOUBLE_EQ(std::stod(cells[k]), 0.0);
    }
    ++rows;
  }
  EXPECT_EQ(rows, 2);
}

TEST(Cli, UnsplittableDatasetIsRuntimeError) {
  const fs::path data = fresh_dir("cli_small");
  ASSERT_EQ(invoke({"synth", "--config", kTiny.string(), "--count", "2", "--out", data.string()}).code, 0);
  const Result r = invoke({"eval", "--config", kTiny.string(), "--data", data.string(), "--pred", data.string(),
                           "--split", "val", "--out", fresh_dir("cli_empty").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("split"), std::string::npos);
}

TEST(Cli, BenchWritesCompleteReport) {
  const fs::path out = fresh_dir("cli_bench");
  const Result r =
      invoke({"bench", "--config", kTiny.string(), "--iters", "3", "--warmup", "1", "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(out / "bench.csv"));
  EXPECT_NE(r.out.find("# hardware: "), std::string::npos);
  EXPECT_NE(r.out.find("samples,mean_s,std_s,p50_s,p95_s,throughput_per_s\n3,"), std::string::npos);
}

}  // namespace
}  // namespace dualswin

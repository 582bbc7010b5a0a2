#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "test_support.hpp"

namespace {

namespace fs = std::filesystem;

struct Run {
  int code = -1;
  std::string out;
};

Run run_cli(const std::string& args, const fs::path& dir) {
  const auto out_file = dir / "stdout.txt";
  const std::string cmd = std::string(TRAJMINE_CLI_PATH) + " " + args + " > " + out_file.string() + " 2> " +
                          (dir / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(out_file);
  r.out.assign(std::istreambuf_iterator<char>(in), {});
  return r;
}

fs::path write_config(const fs::path& dir, const std::string& extra = "") {
  const auto path = dir / "config.json";
  std::ofstream(path) << R"({
  "data": {"synth": {"n_examples": 160, "rare_rate": 0.1}},
  "flow": {"coupling_layers": 2, "hidden": 8},
  "train": {"epochs": 2, "batch_size": 32},
  "mining": {"r": [0.1]},
  "eval": {"random_seeds": 2},
  "out": ")" + (dir / "out").string() + "\"" + extra + "\n}\n";
  return path;
}

TEST(Cli, HelpExitsZero) {
  const auto dir = trajmine::test::scratch_dir("cli_help");
  EXPECT_EQ(run_cli("--help", dir).code, 0);
  EXPECT_EQ(run_cli("score --help", dir).code, 0);
}

TEST(Cli, UsageErrorsExitTwo) {
  const auto dir = trajmine::test::scratch_dir("cli_usage");
  EXPECT_EQ(run_cli("", dir).code, 2);
  EXPECT_EQ(run_cli("mine", dir).code, 2);
  EXPECT_EQ(run_cli("frobnicate --config x.json", dir).code, 2);
}

TEST(Cli, BadConfigExitsTwo) {
  const auto dir = trajmine::test::scratch_dir("cli_badcfg");
  EXPECT_EQ(run_cli("gen --config " + (dir / "nope.json").string(), dir).code, 2);
  const auto cfg = write_config(dir, R"(, "bogus": 1)");
  EXPECT_EQ(run_cli("gen --config " + cfg.string(), dir).code, 2);
  const auto good = write_config(dir);
  EXPECT_EQ(run_cli("gen --config " + good.string() + " --r 0.1,7", dir).code, 2);
}

TEST(Cli, MineBeforeScoreExitsThree) {
  const auto dir = trajmine::test::scratch_dir("cli_prereq");
  const auto cfg = write_config(dir);
  EXPECT_EQ(run_cli("mine --config " + cfg.string(), dir).code, 3);
}

TEST(Cli, NumericFailureExitsFour) {
  const auto dir = trajmine::test::scratch_dir("cli_numeric");
  const auto cfg = write_config(dir, R"(, "kalman": {"measurement_noise_std": 1e200})");
  EXPECT_EQ(run_cli("all --config " + cfg.string(), dir).code, 4);
}

TEST(Cli, StagesRunInOrderAndFlagsOverride) {
  const auto dir = trajmine::test::scratch_dir("cli_stages");
  const auto cfg = write_config(dir).string();
  for (const char* stage : {"gen", "ingest", "features", "train", "score", "mine", "eval"}) {
    const auto r = run_cli(std::string(stage) + " --config " + cfg, dir);
    ASSERT_EQ(r.code, 0) << stage;
    EXPECT_FALSE(r.out.empty()) << stage;
  }
  EXPECT_TRUE(fs::exists(dir / "out" / "eval_r0.1.json"));
  EXPECT_EQ(run_cli("eval --config " + cfg + " --lambda 0.2", dir).code, 3);
  const auto other = dir / "other";
  const auto r = run_cli("all --config " + cfg + " --out " + other.string() + " --r 0.2 --scheme fixsegnum:3", dir);
  ASSERT_EQ(r.code, 0);
  EXPECT_TRUE(fs::exists(other / "mined_r0.2.json"));
  EXPECT_NE(r.out.find((other / "scores.csv").string()), std::string::npos);
}

}  // namespace

// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "test_util.hpp"

namespace fs = std::filesystem;
using gazenet::testing::temp_dir;

namespace {

struct RunResult {
  int code = -1;
  std::string output;  ///< stdout and stderr combined
};

RunResult run(const std::string& args, const std::string& env = "env -u GAZENET_CONFIG") {
  static int counter = 0;
  const fs::path log = fs::temp_directory_path() / ("gazenet_cli_" + std::to_string(counter++) + ".log");
  const std::string cmd = env + " '" + std::string(GAZENET_CLI_PATH) + "' " + args + " > '" +
                          log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.output = ss.str();
  fs::remove(log);
  return r;
}

bool contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos;
}

}  // namespace

TEST(Cli, HelpExitsZero) {
  const auto r = run("--help");
  EXPECT_EQ(r.code, 0);
  for (const char* sub : {"synth-gen", "normalize", "train", "evaluate", "heatmap"}) {
    EXPECT_TRUE(contains(r.output, sub)) << sub;
  }
}

TEST(Cli, MissingSubcommandIsUsageError) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
}

TEST(Cli, UnknownFlagIsUsageError) {
  const auto r = run("train --out /tmp/x --no-such-flag");
  EXPECT_EQ(r.code, 2);
}

TEST(Cli, MissingConfigIsUsageError) {
  const fs::path dir = temp_dir("cli_noconfig");
  const auto r = run("train --out '" + (dir / "out").string() + "'");
  EXPECT_EQ(r.code, 2) << r.output;
  EXPECT_TRUE(contains(r.output, "--config")) << r.output;
  EXPECT_TRUE(contains(r.output, "GAZENET_CONFIG")) << r.output;
  // A config path that does not exist is also a usage problem.
  const auto r2 = run("evaluate --out '" + (dir / "ev").string() + "' --config '" +
                      (dir / "nope.json").string() + "'");
  EXPECT_EQ(r2.code, 2) << r2.output;
}

TEST(Cli, EndToEndPipeline) {
  const fs::path dir = temp_dir("cli_pipeline");
  const fs::path ds = dir / "ds";
  auto r = run("synth-gen --out '" + ds.string() +
               "' --subjects 3 --frames 8 --seed 4 --supersample 1");
  ASSERT_EQ(r.code, 0) << r.output;
  ASSERT_TRUE(fs::exists(ds / "manifest.jsonl"));
  ASSERT_TRUE(fs::exists(ds / "cameras.csv"));

  // Refuses to overwrite silently.
  r = run("synth-gen --out '" + ds.string() + "' --subjects 1 --frames 2");
  EXPECT_NE(r.code, 0);
  EXPECT_TRUE(contains(r.output, "overwrite")) << r.output;

  const fs::path cfg = dir / "cfg.json";
  {
    nlohmann::json j = {{"data", {{"manifest", "ds/manifest.jsonl"}, {"intrinsics", "ds/cameras.csv"}}},
                        {"model", {{"scale", 0.0625}}},
                        {"train", {{"epochs_stage1", 1}, {"epochs_stage2", 1}, {"batch_size", 4}}}};
    std::ofstream(cfg) << j.dump(2);
  }

  // The configuration may come from the environment variable.
  r = run("normalize --out '" + (dir / "norm").string() + "' --limit 2",
          "env GAZENET_CONFIG='" + cfg.string() + "'");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(dir / "norm" / "samples.jsonl"));

  r = run("train --config '" + cfg.string() + "' --out '" + (dir / "static").string() +
          "' --mode static");
  ASSERT_EQ(r.code, 0) << r.output;
  const fs::path model = dir / "static" / "model.params";
  ASSERT_TRUE(fs::exists(model));
  EXPECT_TRUE(fs::exists(dir / "static" / "history.tsv"));

  // Temporal training names the missing stage-1 artifact.
  r = run("train --config '" + cfg.string() + "' --out '" + (dir / "temporal").string() +
          "' --mode temporal");
  EXPECT_EQ(r.code, 2) << r.output;
  EXPECT_TRUE(contains(r.output, "--stage1")) << r.output;
  r = run("train --config '" + cfg.string() + "' --out '" + (dir / "temporal").string() +
          "' --mode temporal --stage1 '" + (dir / "missing.params").string() + "'");
  EXPECT_EQ(r.code, 1) << r.output;

  r = run("evaluate --config '" + cfg.string() + "' --out '" + (dir / "eval").string() +
          "' --model '" + model.string() + "'");
  ASSERT_EQ(r.code, 0) << r.output;
  const fs::path frames = dir / "eval" / "static" / "frames.tsv";
  EXPECT_TRUE(fs::exists(frames));
  EXPECT_TRUE(fs::exists(dir / "eval" / "static" / "summary.json"));
  EXPECT_TRUE(fs::exists(dir / "eval" / "table.txt"));

  r = run("heatmap --report '" + frames.string() + "' --space head --bin-width 10");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(contains(r.output, "theta_lo")) << r.output;
  r = run("heatmap --report '" + frames.string() + "' --minus '" + frames.string() + "'");
  ASSERT_EQ(r.code, 0) << r.output;

  r = run("heatmap --report '" + frames.string() + "' --space sideways");
  EXPECT_EQ(r.code, 2);
}

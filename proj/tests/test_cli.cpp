// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <sstream>

#include "atr/fs_util.hpp"
#include "support.hpp"

using atr::testing::TempDir;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result atr_cli(const std::string& args) {
  const std::string cmd = std::string(ATR_CLI_PATH) + " " + args + " 2>&1";
  Result r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), p)) r.out.append(buf.data(), n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

// Fixture plus a scripted LVLM file; returns the common run flags.
std::string setup(const TempDir& dir, int n = 6) {
  auto r = atr_cli("generate-fixture -o " + q(dir / "fx") + " -n " + std::to_string(n) +
                   " --classes tank,truck,apc,tractor --seed 7");
  EXPECT_EQ(r.code, 0) << r.out;
  atr::write_file_atomic(dir / "script.json", atr::testing::e2e_script_json().dump(2));
  return "--manifest " + q(dir / "fx/manifest.jsonl") + " --detector mock --scripted-lvlm scripted=" +
         q(dir / "script.json") +
         " --strategy open_set --strategy closed_set --strategy cot_open --strategy cot_closed"
         " --known-labels tank,truck,apc";
}

}  // namespace

TEST(Cli, NoSubcommandIsAUsageError) {
  const auto r = atr_cli("");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.out.find("subcommand is required"), std::string::npos) << r.out;
}

TEST(Cli, GenerateFixtureIsDeterministic) {
  TempDir dir;
  ASSERT_EQ(atr_cli("generate-fixture -o " + q(dir / "a") + " -n 3 --classes tank,truck").code, 0);
  ASSERT_EQ(atr_cli("generate-fixture -o " + q(dir / "b") + " -n 3 --classes tank,truck").code, 0);
  EXPECT_EQ(atr::read_file_text(dir / "a/manifest.jsonl"), atr::read_file_text(dir / "b/manifest.jsonl"));
  EXPECT_EQ(atr::read_file_bytes(dir / "a/images/s0002.png"), atr::read_file_bytes(dir / "b/images/s0002.png"));
}

TEST(Cli, DegradeWritesARainManifest) {
  TempDir dir;
  setup(dir, 2);
  const auto r = atr_cli("degrade --manifest " + q(dir / "fx/manifest.jsonl") + " -o " + q(dir / "rain") + " --seed 3");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto m = atr::load_manifest(dir / "rain/manifest.jsonl");
  ASSERT_EQ(m.samples.size(), 2u);
  EXPECT_EQ(m.samples[0].condition, atr::Condition::rain);
}

TEST(Cli, RunThenReportReproducesTheTables) {
  TempDir dir;
  const auto flags = setup(dir);
  const auto r = atr_cli("run " + flags + " -o " + q(dir / "out") + " -j 2");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("| Model |"), std::string::npos) << r.out;
  const auto md = atr_cli("report --run-dir " + q(dir / "out") + " --format markdown --out " + q(dir / "again.md"));
  ASSERT_EQ(md.code, 0) << md.out;
  EXPECT_EQ(atr::read_file_text(dir / "again.md"), atr::read_file_text(dir / "out/report.md"));
  const auto csv = atr_cli("report --run-dir " + q(dir / "out") + " --format csv");
  ASSERT_EQ(csv.code, 0);
  EXPECT_EQ(csv.out, atr::read_file_text(dir / "out/report.csv"));
}

TEST(Cli, ConfigFileWithFlagOverrides) {
  TempDir dir;
  setup(dir, 3);
  auto cfg = atr::to_json(atr::testing::e2e_config(dir / "fx/manifest.jsonl", dir / "ignored"));
  cfg.erase("rain");
  atr::write_file_atomic(dir / "run.json", cfg.dump(2));
  const auto r = atr_cli("run -c " + q(dir / "run.json") + " -o " + q(dir / "out"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(dir / "out/report.md"));
  EXPECT_FALSE(fs::exists(dir / "ignored"));
}

TEST(Cli, ConfigErrorsExitWithTwo) {
  TempDir dir;
  const auto flags = setup(dir, 2);
  auto r = atr_cli("run " + flags + " -o " + q(dir / "out") + " --cassette-mode replay --cassette-dir " +
                   q(dir / "none"));
  EXPECT_EQ(r.code, 2) << r.out;
  EXPECT_NE(r.out.find("missing cassette directory"), std::string::npos) << r.out;
  r = atr_cli("run -c " + q(dir / "missing.json"));
  EXPECT_EQ(r.code, 2) << r.out;
}

TEST(Cli, DetectWritesJsonLines) {
  TempDir dir;
  const auto flags = setup(dir, 4);
  const auto r = atr_cli("detect " + flags + " -o " + q(dir / "out") + " --out " + q(dir / "dets.jsonl") + " --verify");
  ASSERT_EQ(r.code, 0) << r.out;
  std::size_t lines = 0;
  std::istringstream in(atr::read_file_text(dir / "dets.jsonl"));
  for (std::string line; std::getline(in, line); ++lines) EXPECT_TRUE(json::parse(line).contains("detections"));
  EXPECT_EQ(lines, 4u);
}

TEST(Cli, CompareModesPrintsBothRecalls) {
  TempDir dir;
  setup(dir, 6);
  const auto r = atr_cli("compare-modes --manifest " + q(dir / "fx/manifest.jsonl") + " -o " + q(dir / "cmp") +
                         " --compare-keywords car,truck");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("binary"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("keyword"), std::string::npos) << r.out;
  EXPECT_TRUE(fs::exists(dir / "cmp/compare.json"));
}

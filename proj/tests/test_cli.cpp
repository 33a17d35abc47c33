#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "esdid/cli.hpp"

namespace {

const std::string kToy = std::string(ESDID_DATA_DIR) + "/toy/toy_panel.csv";

struct Run {
  int code = 0;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "esdid");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Run r;
  r.code = esdid::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "esdid_cli_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Cli, MinimalRunPrintsTable) {
  auto r = cli({kToy, "--effects", "3", "--placebos", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("effect_1"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("placebo_2"), std::string::npos) << r.out;
}

TEST(Cli, TooManyPlacebosIsUsageError) {
  auto r = cli({kToy, "--effects", "3", "--placebos", "4"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("cannot be larger"), std::string::npos) << r.err;
}

TEST(Cli, MissingFileIsInputError) {
  auto r = cli({"/nonexistent/panel.csv"});
  EXPECT_EQ(r.code, 2);
}

TEST(Cli, UnknownColumnIsInputError) {
  auto r = cli({kToy, "--outcome", "nope"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("nope"), std::string::npos);
}

TEST(Cli, UnknownFlagIsUsageError) {
  EXPECT_EQ(cli({kToy, "--no-such-flag"}).code, 1);
}

TEST(Cli, DesignTableOnConsole) {
  auto r = cli({kToy, "--effects", "2", "--design", "0.8,console"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("cumulative share"), std::string::npos) << r.out;
}

TEST(Cli, OutputsAreDeterministic) {
  std::vector<std::string> args = {kToy,       "--effects", "3", "--placebos", "2", "--weight", "weight",
                                   "--format", "json",      "--bootstrap", "30", "--seed", "5"};
  auto a = cli(args), b = cli(args);
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  auto j = nlohmann::json::parse(a.out);
  EXPECT_EQ(j["schema_version"], 1);
  EXPECT_EQ(j["effects"].size(), 3u);
}

TEST(Cli, CsvCarriesSchemaVersion) {
  auto r = cli({kToy, "--effects", "2", "--format", "csv"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("# schema_version=1\n", 0), 0u) << r.out;
}

TEST(Cli, PlotFileHasReferencePeriodAndPlacebos) {
  auto path = scratch("plot.csv");
  auto r = cli({kToy, "--effects", "3", "--placebos", "2", "--plot", path.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  auto s = slurp(path);
  EXPECT_NE(s.find("\n0,0,"), std::string::npos) << s;
  EXPECT_NE(s.find("\n-2,"), std::string::npos) << s;
  EXPECT_NE(s.find("\n-1,"), std::string::npos) << s;
  EXPECT_NE(s.find("\n3,"), std::string::npos) << s;
}

TEST(Cli, ByWithPredictHet) {
  auto r = cli({kToy, "--by", "state", "--predict-het", "z", "--format", "json"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = nlohmann::json::parse(r.out);
  ASSERT_EQ(j["levels"].size(), 2u);
  EXPECT_EQ(j["levels"][0]["level"], "A");
  EXPECT_TRUE(j["levels"][0].contains("predict_het"));
}

TEST(Cli, PredictHetWithNormalizedIsUsageError) {
  EXPECT_EQ(cli({kToy, "--normalized", "--predict-het", "z"}).code, 1);
}

TEST(Cli, ControlsAndEqualEffects) {
  auto r = cli({kToy, "--effects", "3", "--controls", "x1", "--effects-equal", "--format", "json"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = nlohmann::json::parse(r.out);
  EXPECT_TRUE(j["tests"].contains("effects_equal"));
  EXPECT_FALSE(j["tests"]["effects_equal"].is_null());
}

TEST(Cli, AuditAndInfluenceFiles) {
  auto audit = scratch("audit.csv"), infl = scratch("influence.csv");
  auto r = cli({kToy, "--effects", "2", "--audit", audit.string(), "--influence", infl.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(std::filesystem::exists(audit));
  auto s = slurp(infl);
  EXPECT_NE(s.find("effect_1"), std::string::npos);
}

TEST(Cli, ExternalBinaryRuns) {
  const std::string cmd = std::string(ESDID_CLI_PATH) + " " + kToy + " --effects 1 > /dev/null 2>&1";
  EXPECT_EQ(std::system(cmd.c_str()), 0);
}

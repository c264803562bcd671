#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

namespace {

namespace fs = std::filesystem;

struct Run {
  int code = -1;
  std::string out;
};

// Runs the CLI through the shell; stderr is merged when `merge` is set.
Run cli(const std::string& args, bool merge = false, const std::string& stdin_text = "") {
  std::string cmd = std::string(WPGSD_CLI_PATH) + " " + args;
  if (!stdin_text.empty()) cmd = "printf '" + stdin_text + "' | " + cmd;
  cmd += merge ? " 2>&1" : " 2>/dev/null";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string design(const std::string& name) { return std::string(WPGSD_SOURCE_DIR) + "/designs/" + name; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name, const std::string& content) {
  const auto dir = fs::temp_directory_path() / "wpgsd_cli_test";
  fs::create_directories(dir);
  const auto p = dir / name;
  std::ofstream(p, std::ios::binary) << content;
  return p;
}

void expect_golden(const std::string& args, const std::string& golden) {
  const auto r = cli(args);
  EXPECT_EQ(r.code, 0) << args;
  EXPECT_EQ(r.out, slurp(fs::path(WPGSD_SOURCE_DIR) / "tests" / "golden" / golden)) << args;
}

}  // namespace

TEST(Cli, GoldenOutputs) {
  expect_golden("bounds --design " + design("example1.json") + " --format markdown", "example1_bounds.md");
  expect_golden("bounds --design " + design("example1_bh.json"), "example1_bh_bounds.csv");
  expect_golden("bounds --design " + design("example2.json") + " --z", "example2_bounds_z.csv");
  expect_golden("corr --design " + design("example1.json"), "example1_corr.csv");
  expect_golden("corr --design " + design("a6.json") + " --precision 6", "a6_corr.csv");
}

TEST(Cli, BoundsMarkdownLayout) {
  const auto r = cli("bounds --design " + design("example1.json") + " --format markdown");
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("| Hypothesis set | Analysis | Bonferroni H1 |"), std::string::npos);
  EXPECT_NE(r.out.find("| H1 ∩ H2 ∩ H3 | 1 | 0.0009 | 0.0009 | 0.0012 | 0.0011 | 0.0011 | 0.0014 |"), std::string::npos);
  EXPECT_NE(r.out.find("| H1 ∩ H2 ∩ H3 | 2 | 0.0070 | 0.0070 | 0.0094 | 0.0092 | 0.0092 | 0.0123 |"), std::string::npos);
}

TEST(Cli, ConsonanceExitCodes) {
  EXPECT_EQ(cli("consonance --design " + design("example1_bh.json")).code, 0);
  EXPECT_EQ(cli("consonance --design " + design("example2.json")).code, 0);
  const auto r = cli("consonance --design " + design("example1.json"));
  EXPECT_EQ(r.code, 3);
  EXPECT_EQ(r.out, slurp(fs::path(WPGSD_SOURCE_DIR) / "tests" / "golden" / "example1_consonance.csv"));
}

TEST(Cli, ErrorClasses) {
  auto r = cli("bounds --design /nonexistent/design.json", true);
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.out.rfind("error[io]", 0), 0u) << r.out;

  r = cli("frobnicate", true);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("error[usage]"), std::string::npos) << r.out;

  r = cli("bounds --design " + design("example1.json") + " --precision 20", true);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("error[usage]"), std::string::npos);

  auto doc = nlohmann::json::parse(slurp(design("example1.json")));
  doc["colour"] = "blue";
  r = cli("bounds --design " + scratch("unknown_key.json", doc.dump()).string(), true);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("error[schema]"), std::string::npos) << r.out;

  doc.erase("colour");
  doc["weights"] = {0.5, 0.5, 0.5};
  r = cli("bounds --design " + scratch("heavy.json", doc.dump()).string(), true);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("error[validation]"), std::string::npos) << r.out;

  r = cli("bounds --design " + scratch("broken.json", "{\"alpha\": ").string(), true);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("error[schema]"), std::string::npos);
}

TEST(Cli, ByteIdenticalReruns) {
  const std::string args = "bounds --design " + design("example1.json") + " --format json";
  const auto a = cli(args), b = cli(args + " --threads 1");
  EXPECT_EQ(a.out, b.out);
  const auto doc = nlohmann::json::parse(a.out);
  EXPECT_EQ(doc["content_hash"].get<std::string>().size(), 16u);
}

TEST(Cli, JsonBoundsRoundTrip) {
  const auto bounds = cli("bounds --design " + design("example1.json") + " --format json");
  ASSERT_EQ(bounds.code, 0);
  const auto table = scratch("bounds.json", bounds.out);
  // p-values placed on and just beyond several bounds.
  const char* cases[] = {
      "hypothesis,analysis,p\nH1,1,0.00105\nH2,1,0.5\nH3,1,0.5\n",
      "hypothesis,analysis,p\nH1,1,0.004\nH2,1,0.2\nH3,1,0.0012\nH1,2,0.012\nH2,2,0.3\nH3,2,0.0001\n",
      "hypothesis,analysis,z\nH1,1,3.2\nH2,1,3.0\nH3,1,2.9\nH1,2,2.0\nH2,2,2.4\nH3,2,1.0\n",
      "hypothesis,analysis,p\nH1,1,0.001051669853200807\nH2,1,NA\nH3,1,0.9\n",
  };
  int n = 0;
  for (const char* c : cases) {
    const auto obs = scratch("obs" + std::to_string(n++) + ".csv", c);
    const auto direct = cli("test --design " + design("example1.json") + " --observed " + obs.string() + " --format json");
    const auto via = cli("test --design " + design("example1.json") + " --observed " + obs.string() + " --bounds " +
                         table.string() + " --format json");
    EXPECT_EQ(direct.code, 0);
    EXPECT_EQ(via.code, 0);
    EXPECT_EQ(direct.out, via.out) << c;
  }
}

TEST(Cli, TestReportsRejections) {
  const auto obs = scratch("reject.csv",
                           "hypothesis,analysis,p\nH1,1,0.004\nH2,1,0.2\nH3,1,0.0012\nH1,2,0.012\nH2,2,0.3\nH3,2,0.0001\n");
  const auto r = cli("test --design " + design("example1.json") + " --observed " + obs.string() + " --format json");
  ASSERT_EQ(r.code, 0);
  const auto doc = nlohmann::json::parse(r.out);
  EXPECT_EQ(doc["rejected"], nlohmann::json::parse(R"(["H1", "H3"])"));
  EXPECT_EQ(doc["analyses"][0]["rejected"], nlohmann::json::parse(R"(["H3"])"));
  EXPECT_FALSE(doc["consonant"].get<bool>());
}

TEST(Cli, TestRejectsMismatchedBounds) {
  const auto bounds = cli("bounds --design " + design("example2.json") + " --format json");
  const auto table = scratch("ex2_bounds.json", bounds.out);
  const auto obs = scratch("any.csv", "hypothesis,analysis,p\nH1,1,0.5\nH2,1,0.5\nH3,1,0.5\n");
  auto doc = nlohmann::json::parse(bounds.out);
  doc["entries"].erase(0);
  const auto partial = scratch("partial.json", doc.dump());
  const auto r = cli("test --design " + design("a6.json") + " --observed " + obs.string() + " --bounds " + table.string(), true);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("error[validation]"), std::string::npos) << r.out;
  const auto r2 = cli("test --design " + design("example2.json") + " --observed " + obs.string() + " --bounds " + partial.string(), true);
  EXPECT_EQ(r2.code, 1);
}

TEST(Cli, Formats) {
  const auto csv = cli("corr --design " + design("example2.json") + " --precision 2");
  EXPECT_NE(csv.out.find("H1:A2,0.71,0.38,0.38,1.00"), std::string::npos) << csv.out;
  const auto js = cli("corr --design " + design("example2.json") + " --format json");
  const auto doc = nlohmann::json::parse(js.out);
  EXPECT_TRUE(doc.contains("content_hash"));
  EXPECT_EQ(cli("corr --design " + design("example2.json") + " --format yaml").code, 1);
}

TEST(Cli, Mvn) {
  const auto r = cli("mvn --format json", false, "0 0 0\\n1 0.5 0.5\\n0.5 1 0.5\\n0.5 0.5 1\\n");
  ASSERT_EQ(r.code, 0);
  const auto doc = nlohmann::json::parse(r.out);
  EXPECT_NEAR(doc["probability"].get<double>(), 0.25, 1e-6);
  EXPECT_EQ(cli("mvn", true, "0 0\\n1 0.5\\n").code, 1);
}

TEST(Cli, SimulateSmall) {
  const auto scen = std::string(WPGSD_SOURCE_DIR) + "/designs/scenarios/case10.json";
  const std::string args = "simulate --design " + design("simulation.json") + " --scenario " + scen + " --reps 20 --format json";
  const auto a = cli(args + " --threads 1"), b = cli(args + " --threads 2");
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
  const auto doc = nlohmann::json::parse(a.out);
  EXPECT_EQ(doc["replications"].get<int>(), 20);
}

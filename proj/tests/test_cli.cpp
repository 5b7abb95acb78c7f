#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include <gtest/gtest.h>
#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
};

fs::path scratch() {
  const fs::path p = fs::path(::testing::TempDir()) / "overlap_cli_test";
  fs::create_directories(p);
  return p;
}

CliRun run(const std::string& args) {
  const fs::path out = scratch() / "stdout.txt";
  const std::string cmd = std::string(OVERLAP_CLI_PATH) + " " + args + " > " + out.string() + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(out);
  std::stringstream ss;
  ss << in.rdbuf();
  r.out = ss.str();
  return r;
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

std::string simulated(int n) {
  const fs::path p = scratch() / ("ex1_" + std::to_string(n) + ".csv");
  const CliRun r = run("--output " + p.string() + " simulate --dgp example1 --n " + std::to_string(n) + " --seed 3");
  EXPECT_EQ(r.code, 0);
  return p.string();
}

}  // namespace

TEST(Cli, AnalyzeProducesVersionedJson) {
  const std::string csv = simulated(300);
  const CliRun r = run("analyze --input " + csv + " --L 14");
  ASSERT_EQ(r.code, 0) << r.out;
  const json j = json::parse(r.out);
  EXPECT_EQ(j["schema_version"], 1);
  EXPECT_EQ(j["command"], "analyze");
  EXPECT_EQ(j["n"], 300);
  for (const char* k : {"aipwp", "mp", "m", "mc"}) {
    ASSERT_TRUE(j.contains(k)) << k;
    EXPECT_LE(j[k]["lower"].get<double>(), j[k]["upper"].get<double>());
    EXPECT_TRUE(j[k]["T"].contains("endpoint_max"));
  }
  EXPECT_TRUE(j["epsilon_selected"].get<bool>());
}

TEST(Cli, Deterministic) {
  const std::string csv = simulated(200);
  const CliRun a = run("analyze --input " + csv + " --L 10 --epsilon 0.03");
  const CliRun b = run("analyze --input " + csv + " --L 10 --epsilon 0.03");
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(json::parse(a.out)["epsilon"], 0.03);
}

TEST(Cli, MalformedCsvIsSchemaError) {
  const fs::path p = scratch() / "bad.csv";
  write(p, "x1,y,z\n0,1,1\n");
  const CliRun r = run("analyze --input " + p.string() + " --L 1");
  EXPECT_EQ(r.code, 2);
  const json j = json::parse(r.out);
  EXPECT_EQ(j["error"], "schema");
  EXPECT_EQ(j["schema_version"], 1);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("analyze").code, 2);
  EXPECT_EQ(run("simulate --dgp nope").code, 2);
}

TEST(Cli, StrictFlagsDegenerateEstimand) {
  std::ostringstream csv;
  csv << "x1,y,z,pi,sigma\n";
  for (int i = 0; i < 40; ++i) csv << i / 40.0 << ',' << (i % 3) * 0.1 << ',' << i % 2 << ",0.5,0.1\n";
  const fs::path p = scratch() / "balanced.csv";
  write(p, csv.str());
  const std::string args = "analyze --input " + p.string() + " --L 2 --epsilon 0.05";
  const CliRun loose = run(args);
  EXPECT_EQ(loose.code, 0);
  EXPECT_TRUE(json::parse(loose.out)["mp"]["degenerate"].get<bool>());
  EXPECT_EQ(run("--strict " + args).code, 4);
}

TEST(Cli, SensitivityCsv) {
  const std::string csv = simulated(200);
  const CliRun r = run("sensitivity --input " + csv + " --L 1,5,10 --epsilon 0.03");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(r.out.rfind("p,L,epsilon,lower,upper,length,T\n", 0), 0u);
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 4);
}

TEST(Cli, SimulateTruthAndConfseq) {
  const fs::path truth = scratch() / "truth.csv";
  const CliRun r = run("simulate --dgp toy --seed 1 --truth " + truth.string());
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 551);
  std::ifstream in(truth);
  std::string head;
  std::getline(in, head);
  EXPECT_EQ(head, "f0,f1,tau");
  const CliRun cs = run("confseq --seed 4");
  ASSERT_EQ(cs.code, 0);
  std::istringstream lines(cs.out);
  std::string line;
  int t = 0;
  while (std::getline(lines, line)) EXPECT_EQ(json::parse(line)["t"], ++t);
  EXPECT_EQ(t, 6);
}

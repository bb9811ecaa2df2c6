#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "mfergodic/config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(MFERGODIC_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string cfg(const std::string& name) { return std::string(MFERGODIC_CONFIG_DIR) + "/" + name + ".json"; }

fs::path fresh(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("mfergodic_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

}  // namespace

TEST_CASE("check on the pure OU config reports eta = 2") {
  const auto out = fresh("check");
  REQUIRE(run("--output-dir " + out.string() + " check " + cfg("pure_ou")) == 0);
  const auto j = read_json(out / "pure_ou" / "check.json");
  CHECK(j["results"]["eta"].get<double>() == doctest::Approx(2.0));
  CHECK(j["results"]["passed"].get<bool>());
  const auto rows = mfergodic::ResultsLedger(out / "ledger.csv").read();
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].operation == "check");
  CHECK(rows[0].estimate == doctest::Approx(2.0));
}

TEST_CASE("negative control fails check") {
  const auto out = fresh("neg");
  CHECK(run("--output-dir " + out.string() + " check " + cfg("expanding_drift_negative_control")) == 2);
}

TEST_CASE("config errors exit 1") {
  const auto out = fresh("bad");
  std::ofstream(out / "bad.json") << R"({"schema-version": 1, "benchmark": "x", "model": {}})";
  CHECK(run("check " + (out / "bad.json").string()) == 1);
  CHECK(run("no-such-subcommand") == 1);
}

TEST_CASE("output directory from the environment") {
  const auto out = fresh("env");
  const std::string env = "MFERGODIC_OUTPUT_DIR=" + out.string() + " MFERGODIC_THREADS=1 ";
  const int status = std::system((env + MFERGODIC_CLI + " check " + cfg("pure_ou") + " > /dev/null").c_str());
  CHECK(WEXITSTATUS(status) == 0);
  CHECK(fs::exists(out / "pure_ou" / "check.json"));
}

TEST_CASE("single-threaded reruns reproduce the ledger estimate bitwise") {
  const auto out = fresh("repro");
  auto j = read_json(cfg("ou_cos"));
  j["sim"] = {{"particles", 64}, {"dt", 0.02}, {"replicas", 3}};
  j["operations"] = {{"value-beta", {{"beta", 0.5}}}};
  std::ofstream(out / "small.json") << j.dump();
  for (int k = 0; k < 2; ++k)
    REQUIRE(run("--threads 1 --output-dir " + out.string() + " value-beta " + (out / "small.json").string()) == 0);
  REQUIRE(run("--threads 1 --seed 99 --output-dir " + out.string() + " value-beta " + (out / "small.json").string()) ==
          0);
  const auto rows = mfergodic::ResultsLedger(out / "ledger.csv").read();
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].estimate == rows[1].estimate);
  CHECK(rows[0].config_hash == rows[1].config_hash);
  CHECK(rows[2].seed == 99);
  CHECK(rows[2].estimate != rows[0].estimate);
}

TEST_CASE("couple writes the contraction plot table") {
  const auto out = fresh("couple");
  auto j = read_json(cfg("mf_ou_contract"));
  j["sim"] = {{"particles", 256}, {"dt", 0.01}, {"replicas", 2}};
  std::ofstream(out / "c.json") << j.dump();
  REQUIRE(run("--output-dir " + out.string() + " couple " + (out / "c.json").string()) == 0);
  std::ifstream in(out / "mf_ou_contract" / "couple_contraction_plot.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "t,gap,envelope");
  REQUIRE(run("plot-data --kind contraction " + (out / "mf_ou_contract" / "couple.json").string() + " -o " +
              (out / "again.csv").string()) == 0);
  CHECK(fs::file_size(out / "again.csv") == fs::file_size(out / "mf_ou_contract" / "couple_contraction_plot.csv"));
}

TEST_CASE("plot-data on empty results writes the header only") {
  const auto out = fresh("plot");
  std::ofstream(out / "empty.json").close();
  REQUIRE(run("plot-data --kind cesaro " + (out / "empty.json").string() + " -o " + (out / "p.csv").string()) == 0);
  std::ifstream in(out / "p.csv");
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(ss.str() == "T,v_over_T,stderr\n");
}

TEST_CASE("bench --suite trivial passes") {
  CHECK(run("bench --suite trivial") == 0);
}

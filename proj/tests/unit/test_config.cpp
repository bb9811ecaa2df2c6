#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mfergodic/config.hpp"
#include "mfergodic/errors.hpp"

using namespace mfergodic;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json minimal() {
  return json{{"schema-version", 1},
              {"benchmark", "t"},
              {"seed", 5},
              {"model",
               {{"dim", 1},
                {"drift", {{"B", {{-1.0}}}}},
                {"diffusion", {{"s0", {1.0}}}},
                {"reward", {{"terms", {{{"shape", "cos"}}}}}}}}};
}

fs::path temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("mfergodic_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("canonical form is idempotent") {
  const auto c = ExperimentConfig::from_json(minimal());
  const auto j1 = c.to_json();
  const auto j2 = ExperimentConfig::from_json(j1).to_json();
  CHECK(j1 == j2);
  CHECK(c.hash() == ExperimentConfig::from_json(j2).hash());
  CHECK(c.hash().size() == 16);
}

TEST_CASE("every shipped benchmark config loads and round trips") {
  int n = 0;
  for (const auto& entry : fs::directory_iterator(MFERGODIC_CONFIG_DIR)) {
    if (entry.path().extension() != ".json") continue;
    INFO(entry.path().string());
    const auto c = ExperimentConfig::load(entry.path());
    CHECK(ExperimentConfig::from_json(c.to_json()).to_json() == c.to_json());
    CHECK(c.benchmark == entry.path().stem().string());
    ++n;
  }
  CHECK(n >= 5);
}

TEST_CASE("defaults are filled in") {
  const auto c = ExperimentConfig::from_json(minimal());
  CHECK(c.sim.particles == 4096);
  CHECK(c.sim.replicas == 16);
  CHECK(c.output_dir == "mfergodic-out");
  CHECK(c.value_beta.beta == doctest::Approx(0.1));
  CHECK(c.couple.gap == doctest::Approx(1.0));
}

TEST_CASE("hash changes with any field") {
  auto j = minimal();
  const auto h0 = ExperimentConfig::from_json(j).hash();
  j["seed"] = 6;
  CHECK(ExperimentConfig::from_json(j).hash() != h0);
}

TEST_CASE("config errors name the key") {
  auto j = minimal();
  j.erase("seed");
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(j), doctest::Contains("seed"), ConfigError);
  j = minimal();
  j["colour"] = "red";
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(j), doctest::Contains("colour"), ConfigError);
  j = minimal();
  j["schema-version"] = 99;
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(j), doctest::Contains("schema-version"), ConfigError);
  j = minimal();
  j["sim"] = {{"dt", -1.0}};
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(j), doctest::Contains("sim.dt"), ConfigError);
  j = minimal();
  j["operations"] = {{"value-beta", {{"beta", "x"}}}};
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(j), doctest::Contains("value-beta"), ConfigError);
}

TEST_CASE("model_file references resolve against the config directory") {
  const auto dir = temp_dir("modelfile");
  auto j = minimal();
  std::ofstream(dir / "m.json") << j["model"].dump();
  j.erase("model");
  j["model_file"] = "m.json";
  std::ofstream(dir / "c.json") << j.dump();
  const auto c = ExperimentConfig::load(dir / "c.json");
  CHECK(c.model.dim == 1);
  j["model_file"] = "missing.json";
  std::ofstream(dir / "d.json") << j.dump();
  CHECK_THROWS_WITH_AS(ExperimentConfig::load(dir / "d.json"), doctest::Contains("model_file"), ConfigError);
}

TEST_CASE("ledger appends rows under one header") {
  const auto dir = temp_dir("ledger");
  ResultsLedger ledger(dir / "ledger.csv");
  ledger.append({"2026-01-01T00:00:00Z", "b", "check", 5, 2.0, 0.0, 0.1, "00ff"});
  ledger.append({"2026-01-01T00:00:01Z", "b", "value-beta", 5, 1.25, 0.01, 2.0, "00ff"});
  const auto rows = ledger.read();
  REQUIRE(rows.size() == 2);
  CHECK(rows[1].operation == "value-beta");
  CHECK(rows[1].estimate == 1.25);
  CHECK(rows[1].stderr_ == 0.01);
  std::ifstream in(dir / "ledger.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "timestamp,benchmark,operation,seed,estimate,stderr,runtime_s,config_hash");
  CHECK(ResultsLedger::now_utc().back() == 'Z');
}

TEST_CASE("plot data") {
  CHECK(emit_plot_data(json(), "tauberian") == "beta,beta_v,stderr\n");
  CHECK(emit_plot_data(json::object(), "cesaro") == "T,v_over_T,stderr\n");
  CHECK(emit_plot_data(json(), "contraction") == "t,gap,envelope\n");

  json pair{{"betas", {0.4, 0.2, 0.1, 0.05}}, {"lambda_by_beta", json::array()}};
  for (double v : {0.55, 0.58, 0.595, 0.6}) pair["lambda_by_beta"].push_back({{"estimate", v}, {"stderr", 0.001}});
  const auto csv = emit_plot_data(pair, "tauberian");
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);
  std::vector<double> betas;
  while (std::getline(is, line)) betas.push_back(std::stod(line.substr(0, line.find(','))));
  REQUIRE(betas.size() == 4);
  CHECK(std::is_sorted(betas.rbegin(), betas.rend()));

  const json gap{{"times", {0.0, 0.5, 1.0}}, {"mean_sq_gap", {2.0, 0.8, 0.3}}, {"eta", 1.0}};
  std::istringstream g(emit_plot_data(gap, "contraction"));
  std::getline(g, line);
  for (double t : {0.0, 0.5, 1.0}) {
    std::getline(g, line);
    CHECK(std::stod(line.substr(line.rfind(',') + 1)) == doctest::Approx(2.0 * std::exp(-2.0 * t)));
  }
  CHECK_THROWS_WITH_AS(emit_plot_data(json{{"times", {0.0}}}, "contraction"), doctest::Contains("mean_sq_gap"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(emit_plot_data(json(), "histogram"), doctest::Contains("kind"), ConfigError);
}

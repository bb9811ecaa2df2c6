// Runs acceptance criteria 1-13 and prints one line per criterion.
// Usage: acceptance [--configs DIR] [--threads N] [--only 1,4,10]

#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "mfergodic/acceptance.hpp"

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string configs = MFERGODIC_CONFIG_DIR;
  unsigned threads = 2;
  std::vector<int> only;
  bool verbose = false;
  app.add_option("--configs", configs, "benchmark config directory");
  app.add_option("--threads", threads, "worker cap for the first pass")->check(CLI::PositiveNumber);
  app.add_option("--only", only, "criterion ids")->delimiter(',');
  app.add_flag("-v,--verbose", verbose, "progress notes on stderr");
  CLI11_PARSE(app, argc, argv);

  mfergodic::AcceptanceOptions opts;
  opts.config_dir = configs;
  opts.threads = threads;
  if (verbose) opts.log = &std::cerr;
  mfergodic::AcceptanceSuite suite(opts);
  const auto ids = only.empty() ? mfergodic::AcceptanceSuite::ids("full") : only;
  int failed = 0;
  suite.run_all(ids, [&](const mfergodic::CriterionResult& r) {
    std::cout << r.line() << std::endl;
    failed += !r.passed;
  });
  std::cout << (ids.size() - static_cast<std::size_t>(failed)) << "/" << ids.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}

// mfergodic: configuration-driven front end.
//
// Every subcommand except `bench` and `plot-data` takes a config path, writes
// <output_dir>/<benchmark>/<operation>.{json,csv} and appends one row to
// <output_dir>/ledger.csv. Exit codes: 0 ok, 1 config error, 2 numerical
// failure, 3 acceptance failure.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "mfergodic/acceptance.hpp"
#include "mfergodic/config.hpp"
#include "mfergodic/derivative.hpp"
#include "mfergodic/ergodic.hpp"
#include "mfergodic/errors.hpp"
#include "mfergodic/parallel.hpp"
#include "mfergodic/particle.hpp"
#include "mfergodic/value.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mfergodic;

namespace {

struct Globals {
  unsigned threads = 0;
  std::optional<std::uint64_t> seed;
  std::string output_dir;  // empty: env, then config
  bool quiet = false;
};

// Result of one operation: the JSON document, optional CSV artifacts and the
// headline estimate for the ledger.
struct Outcome {
  json results;
  std::vector<std::pair<std::string, std::string>> csv;  // file suffix, content
  Estimate headline;
  std::string summary;
};

class Runner {
 public:
  Runner(const Globals& g, const std::string& op, const std::string& config_path) : g_(g), op_(op) {
    cfg_ = ExperimentConfig::load(config_path);
    if (g_.seed) cfg_.seed = *g_.seed;
    if (!g_.output_dir.empty()) {
      out_ = g_.output_dir;
    } else if (const char* env = std::getenv("MFERGODIC_OUTPUT_DIR"); env && *env) {
      out_ = env;
    } else {
      out_ = cfg_.output_dir;
    }
  }

  const ExperimentConfig& cfg() const { return cfg_; }

  int finish(const Outcome& o, double runtime_s) const {
    const fs::path dir = out_ / cfg_.benchmark;
    fs::create_directories(dir);
    json doc{{"benchmark", cfg_.benchmark},
             {"operation", op_},
             {"seed", cfg_.seed},
             {"config_hash", cfg_.hash()},
             {"runtime_s", runtime_s},
             {"results", o.results}};
    write(dir / (op_ + ".json"), doc.dump(2) + "\n");
    for (const auto& [suffix, body] : o.csv) write(dir / (op_ + suffix + ".csv"), body);
    ResultsLedger(out_ / "ledger.csv")
        .append({ResultsLedger::now_utc(), cfg_.benchmark, op_, cfg_.seed, o.headline.value, o.headline.std_err,
                 runtime_s, cfg_.hash()});
    if (!g_.quiet) {
      std::cout << o.summary;
      std::cout << "results: " << (dir / (op_ + ".json")).string() << "\n";
    }
    return 0;
  }

  static void write(const fs::path& file, const std::string& body) {
    std::ofstream out(file);
    if (!out) throw ConfigError("output_dir: cannot write " + file.string());
    out << body;
  }

 private:
  const Globals& g_;
  std::string op_;
  ExperimentConfig cfg_;
  fs::path out_;
};

std::string fmt(const Estimate& e) {
  std::ostringstream os;
  os.precision(8);
  os << e.value << " +- " << std::setprecision(3) << e.std_err;
  return os.str();
}

Policy default_policy(const ExperimentConfig& c) {
  if (c.simulate.policy) return Policy::from_json(*c.simulate.policy, c.model.actions);
  return c.family.constant_candidates().front();
}

// -- Operations -------------------------------------------------------------------

Outcome op_check(const ExperimentConfig& c) {
  const auto rep = sample_check_dissipativity(c.model, c.check.samples, c.check.particles, c.seed);
  Outcome o;
  o.results = rep.to_json();
  o.results["constants"] = lipschitz_constants(c.model).to_json();
  o.headline = {rep.eta, 0.0};
  o.summary = rep.table();
  return o;
}

Outcome op_simulate(const ExperimentConfig& c) {
  RngStream init(c.seed, 1), dyn(c.seed, 0);
  const auto e0 = sample_initial(c.initial_law, c.sim.particles, init);
  TrajectoryRecorder rec;
  SimulateOptions so;
  so.T = c.simulate.T;
  so.dt = c.sim.dt;
  so.stride = c.simulate.stride;
  const auto policy = default_policy(c);
  const auto traj = simulate(c.model, e0, policy, so, dyn, {rec.observer()});
  Outcome o;
  const auto fin = traj.final.summary();
  o.results = {{"T", so.T},
               {"dt", so.dt},
               {"policy", policy.describe()},
               {"reward_integral", traj.reward_integral},
               {"final_mean", fin.mean},
               {"final_second_moment", fin.second_moment}};
  o.csv.push_back({"", rec.csv()});
  o.headline = {traj.reward_integral, 0.0};
  o.summary = "int_0^T f dt = " + std::to_string(traj.reward_integral) + " under " + policy.describe() + "\n";
  return o;
}

Outcome op_couple(const ExperimentConfig& c) {
  RngStream init(c.seed, 1), dyn(c.seed, 0);
  const auto a0 = sample_initial(c.initial_law, c.sim.particles, init);
  Ensemble b0 = a0;
  for (double& x : b0.positions) x += c.couple.gap;
  const auto gap = synchronous_coupling_gap(c.model, default_policy(c), a0, b0, c.couple.T, c.sim.dt, dyn,
                                            c.couple.stride);
  Outcome o;
  o.results = {{"times", gap.times},
               {"mean_sq_gap", gap.mean_sq_gap},
               {"envelope", gap.envelope},
               {"eta", gap.eta},
               {"worst_ratio", gap.worst_ratio()}};
  o.csv.push_back({"", gap.csv()});
  o.csv.push_back({"_contraction_plot", emit_plot_data(o.results, "contraction")});
  o.headline = {gap.worst_ratio(), 0.0};
  o.summary = "eta = " + std::to_string(gap.eta) + ", max gap / envelope = " + std::to_string(gap.worst_ratio()) + "\n";
  return o;
}

Outcome op_value_beta(const ExperimentConfig& c) {
  const auto v = value_discounted(c.model, c.initial_law, c.value_beta.beta, c.family, c.optimizer, c.sim, c.seed);
  Outcome o;
  o.results = v.to_json();
  o.headline = v.estimate;
  o.summary = "v^beta = " + fmt(v.estimate) + " (beta " + std::to_string(v.beta) + ", " + v.best_policy.describe() + ")\n";
  return o;
}

Outcome op_value_T(const ExperimentConfig& c, const std::optional<ErgodicPair>& pair) {
  TerminalReward g;
  if (c.value_T.terminal == "mean_abs_penalty") {
    g = TerminalReward::mean_abs_penalty(c.value_T.penalty_weight);
  } else if (c.value_T.terminal == "phi_hat") {
    if (!pair) throw ConfigError("operations.value-T.terminal: phi_hat needs --pair <ergodic-pair.json>");
    g = pair->terminal_reward();
  }
  const auto fam = windowed(c.family, c.value_T.T, c.value_T.windows);
  const auto v = finite_horizon_value(c.model, c.initial_law, c.value_T.T, g, fam, c.optimizer, c.sim, c.seed);
  Outcome o;
  o.results = v.to_json();
  o.headline = v.estimate;
  o.summary = "v^T = " + fmt(v.estimate) + " (T " + std::to_string(v.T) + ", terminal " + v.terminal + ")\n";
  return o;
}

Outcome op_ergodic_pair(const ExperimentConfig& c) {
  const auto pair = vanishing_discount(c.model, c.initial_law, c.family, c.ergodic, c.optimizer, c.sim, c.seed);
  Outcome o;
  o.results = pair.to_json();
  o.headline = pair.lambda;
  std::ostringstream os;
  os << "lambda_hat = " << fmt(pair.lambda);
  if (c.oracle_lambda) os << " (reference " << *c.oracle_lambda << ")";
  os << "\n";
  for (const auto& w : pair.warnings) os << "warning: " << w << "\n";
  o.summary = os.str();
  o.csv.push_back({"_tauberian_plot", emit_plot_data(o.results, "tauberian")});
  return o;
}

Outcome op_tauberian(const ExperimentConfig& c) {
  const auto rep = abelian_tauberian_check(c.model, {"origin", c.initial_law}, c.family, c.tauberian, c.optimizer,
                                           c.sim, c.seed);
  Outcome o;
  o.results = rep.to_json();
  o.csv.push_back({"", rep.csv()});
  o.csv.push_back({"_tauberian_plot", emit_plot_data(o.results, "tauberian")});
  o.csv.push_back({"_cesaro_plot", emit_plot_data(o.results, "cesaro")});
  o.headline = rep.first.lra;
  std::ostringstream os;
  os << "discount " << fmt(rep.first.discount) << "\nhorizon  " << fmt(rep.first.horizon) << "\nlra      "
     << fmt(rep.first.lra) << "\nmax relative gap " << rep.first.max_relative_gap() << "\n";
  for (const auto& w : rep.warnings) os << "warning: " << w << "\n";
  o.summary = os.str();
  return o;
}

ErgodicPair load_or_build_pair(const ExperimentConfig& c, const std::string& pair_file) {
  if (!pair_file.empty()) {
    std::ifstream in(pair_file);
    if (!in) throw ConfigError("--pair: cannot open " + pair_file);
    json j;
    try {
      in >> j;
    } catch (const std::exception& e) {
      throw ConfigError("--pair: " + std::string(e.what()));
    }
    return ErgodicPair::from_json(j.contains("results") ? j.at("results") : j);
  }
  return vanishing_discount(c.model, c.initial_law, c.family, c.ergodic, c.optimizer, c.sim, c.seed);
}

Outcome op_fixed_point(const ExperimentConfig& c, const ErgodicPair& pair) {
  const auto fp = fixed_point_residual(c.model, pair, c.fixed_point.probe, c.fixed_point.T, c.family, c.optimizer,
                                       c.sim, mix_seed(c.seed + 8));
  Outcome o;
  o.results = fp.to_json();
  o.headline = fp.residual;
  o.summary = "phi(mu) + lambda T = " + fmt(fp.lhs) + "\nsup E[int f + phi(mu_T)] = " + fmt(fp.rhs) +
              "\nrelative residual = " + std::to_string(fp.relative) + "\n";
  return o;
}

std::unique_ptr<DerivativeSource> make_source(const ExperimentConfig& c, const std::string& kind,
                                              const std::vector<double>& action, const std::optional<ErgodicPair>& pair) {
  if (kind == "poisson_oracle") return std::make_unique<PoissonOracle>(c.model, action);
  if (kind == "phi_hat") {
    if (!pair) throw ConfigError("source: phi_hat needs an ergodic pair");
    auto p = std::make_shared<ErgodicPair>(*pair);
    return std::make_unique<SummaryDerivativeSource>("phi_hat",
                                                     [p](double m, double sd) { return p->phi(m, sd).value; });
  }
  throw ConfigError("source: expected poisson_oracle or phi_hat, got '" + kind + "'");
}

Outcome op_hjb(const ExperimentConfig& c, const ErgodicPair& pair) {
  const auto source = make_source(c, c.hjb.source, c.hjb.action, pair);
  std::vector<std::pair<std::string, Ensemble>> probes;
  for (const auto& p : c.hjb.probes) probes.emplace_back(p.id, quantile_cloud(p.law, c.hjb.cloud_size));
  if (probes.empty()) probes.emplace_back("origin", quantile_cloud(c.initial_law, c.hjb.cloud_size));
  auto rep = hjb_residual(c.model, pair.lambda.value, *source, probes, c.hjb.action_resolution);
  rep.lambda_stderr = pair.lambda.std_err;
  Outcome o;
  o.results = rep.to_json();
  o.csv.push_back({"", rep.csv()});
  o.headline = {rep.max_abs_residual, pair.lambda.std_err};
  std::ostringstream os;
  os << "lambda_hat = " << fmt(pair.lambda) << " (" << rep.source << ")\n";
  for (const auto& p : rep.probes) os << "  " << p.probe << ": F = " << p.F << ", residual = " << p.residual << "\n";
  o.summary = os.str();
  return o;
}

Outcome op_verify(const ExperimentConfig& c, const ErgodicPair& pair) {
  const auto source = make_source(c, c.verify.source, c.verify.oracle_action, pair);
  const auto feedback = greedy_feedback(c.model, *source, c.verify.greedy);
  const auto window =
      c.verify.window ? *c.verify.window : LraWindow::from_eta(dissipativity_margin(c.model).eta, c.sim.dt);
  const auto ver = verification_run(c.model, feedback, c.initial_law, pair, window, c.sim, mix_seed(c.seed + 12));
  Outcome o;
  o.results = ver.to_json();
  o.results["feedback"] = feedback.to_json();
  std::ostringstream os;
  os << "greedy long-run average = " << fmt(ver.lra.estimate) << "\ndrift slope = " << fmt(ver.slope) << "\n";
  if (c.verify.wrong_action) {
    const auto wrong = long_run_average(c.model, Policy::constant(c.model.actions, *c.verify.wrong_action),
                                        c.initial_law, window.T, window.burn_in, c.sim, mix_seed(c.seed + 13));
    o.results["wrong_constant"] = wrong.to_json();
    os << "wrong constant long-run average = " << fmt(wrong.estimate) << "\n";
  }
  o.headline = ver.lra.estimate;
  o.summary = os.str();
  return o;
}

unsigned env_threads() {
  if (const char* env = std::getenv("MFERGODIC_THREADS"); env && *env) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<unsigned>(v);
    } catch (const std::exception&) {
    }
    throw ConfigError("MFERGODIC_THREADS: expected a positive integer, got '" + std::string(env) + "'");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ergodic mean-field control experiments"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--threads", g.threads, "worker cap (env MFERGODIC_THREADS); 1 is bitwise reproducible");
  auto* seed_opt = app.add_option("--seed", seed, "overrides the config seed");
  app.add_option("--output-dir", g.output_dir, "overrides the config output_dir (env MFERGODIC_OUTPUT_DIR)");
  app.add_flag("-q,--quiet", g.quiet, "no summary on stdout");

  std::string config_path, pair_file;
  const std::vector<std::pair<std::string, std::string>> ops = {
      {"check", "dissipativity report"},
      {"simulate", "one particle trajectory (CSV)"},
      {"couple", "synchronous coupling gap curve (CSV)"},
      {"value-beta", "discounted value"},
      {"value-T", "finite-horizon value"},
      {"ergodic-pair", "lambda and phi by vanishing discount"},
      {"tauberian", "three routes to lambda"},
      {"fixed-point", "fixed-point residual"},
      {"hjb-residual", "ergodic HJB residual on probe measures"},
      {"verify", "greedy feedback and closed-loop run"},
  };
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : ops) {
    auto* s = app.add_subcommand(name, help);
    s->add_option("config", config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    if (name == "value-T" || name == "fixed-point" || name == "hjb-residual" || name == "verify")
      s->add_option("--pair", pair_file, "ergodic-pair results to reuse instead of recomputing");
    subs[name] = s;
  }

  auto* canon = app.add_subcommand("canonical", "print the validated config with every default filled in");
  std::string canon_path;
  canon->add_option("config", canon_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);

  auto* bench = app.add_subcommand("bench", "acceptance suite");
  std::string suite = "full", config_dir = MFERGODIC_CONFIG_DIR;
  bench->add_option("--suite", suite, "trivial or full")->check(CLI::IsMember({"trivial", "full"}));
  bench->add_option("--configs", config_dir, "benchmark config directory");

  auto* plot = app.add_subcommand("plot-data", "tidy CSV from a results JSON");
  std::string results_file, kind, plot_out;
  plot->add_option("results", results_file, "results JSON written by a subcommand")->required();
  plot->add_option("--kind", kind, "tauberian, cesaro or contraction")->required();
  plot->add_option("-o,--output", plot_out, "output CSV (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }
  if (*seed_opt) g.seed = seed;

  try {
    const unsigned env = env_threads();
    if (g.threads > 0) {
      set_thread_cap(g.threads);
    } else if (env > 0) {
      set_thread_cap(env);
    }

    if (*bench) {
      AcceptanceOptions opts;
      opts.config_dir = config_dir;
      opts.threads = thread_cap();
      opts.seed = g.seed;
      AcceptanceSuite s(opts);
      int failed = 0;
      const auto ids = AcceptanceSuite::ids(suite);
      s.run_all(ids, [&](const CriterionResult& r) {
        std::cout << r.line() << std::endl;
        failed += !r.passed;
      });
      std::cout << ids.size() - static_cast<std::size_t>(failed) << "/" << ids.size() << " criteria passed\n";
      return failed == 0 ? 0 : 3;
    }

    if (*canon) {
      auto c = ExperimentConfig::load(canon_path);
      if (g.seed) c.seed = *g.seed;
      std::cout << c.to_json().dump(2) << "\n";
      if (!g.quiet) std::cerr << "config_hash " << c.hash() << "\n";
      return 0;
    }

    if (*plot) {
      json j;
      if (!results_file.empty()) {
        std::ifstream in(results_file);
        if (!in) throw ConfigError("results: cannot open " + results_file);
        if (in.peek() != std::ifstream::traits_type::eof()) {
          try {
            in >> j;
          } catch (const std::exception& e) {
            throw ConfigError("results: " + std::string(e.what()));
          }
        }
      }
      const auto body = emit_plot_data(j.is_object() && j.contains("results") ? j.at("results") : j, kind);
      if (plot_out.empty()) {
        std::cout << body;
      } else {
        Runner::write(plot_out, body);
      }
      return 0;
    }

    std::string op;
    for (const auto& [name, s] : subs)
      if (*s) op = name;
    Runner run(g, op, config_path);
    const auto& c = run.cfg();
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    if (op == "check") {
      o = op_check(c);
    } else if (op == "simulate") {
      o = op_simulate(c);
    } else if (op == "couple") {
      o = op_couple(c);
    } else if (op == "value-beta") {
      o = op_value_beta(c);
    } else if (op == "value-T") {
      std::optional<ErgodicPair> pair;
      if (c.value_T.terminal == "phi_hat") pair = load_or_build_pair(c, pair_file);
      o = op_value_T(c, pair);
    } else if (op == "ergodic-pair") {
      o = op_ergodic_pair(c);
    } else if (op == "tauberian") {
      o = op_tauberian(c);
    } else if (op == "fixed-point") {
      o = op_fixed_point(c, load_or_build_pair(c, pair_file));
    } else if (op == "hjb-residual") {
      o = op_hjb(c, load_or_build_pair(c, pair_file));
    } else if (op == "verify") {
      o = op_verify(c, load_or_build_pair(c, pair_file));
    }
    const double runtime = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    run.finish(o, runtime);
    if (op == "check" && !o.results.value("passed", false)) return 2;
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

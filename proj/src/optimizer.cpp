#include "mfergodic/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json_util.hpp"
#include "mfergodic/errors.hpp"
#include "mfergodic/parallel.hpp"
#include "mfergodic/rng.hpp"

namespace mfergodic {

using nlohmann::json;
using namespace detail;

void OptimizerConfig::validate() const {
  if (population < 8) throw ConfigError("optimizer.population: must be >= 8");
  if (!(elite_fraction > 0.0 && elite_fraction <= 0.5))
    throw ConfigError("optimizer.elite_fraction: must lie in (0, 0.5]");
  if (iterations < 1) throw ConfigError("optimizer.iterations: must be >= 1");
  if (!(initial_spread > 0.0)) throw ConfigError("optimizer.initial_spread: must be > 0");
  if (!(smoothing > 0.0 && smoothing <= 1.0)) throw ConfigError("optimizer.smoothing: must lie in (0, 1]");
  if (restarts < 1) throw ConfigError("optimizer.restarts: must be >= 1");
  if (!(reevaluation_scale >= 1.0)) throw ConfigError("optimizer.reevaluation_scale: must be >= 1");
}

json OptimizerConfig::to_json() const {
  return json{{"population", population}, {"elite_fraction", elite_fraction}, {"iterations", iterations},
              {"initial_spread", initial_spread}, {"smoothing", smoothing}, {"seed", seed},
              {"restarts", restarts}, {"reevaluation_scale", reevaluation_scale}};
}

OptimizerConfig OptimizerConfig::from_json(const json& j) {
  const std::string path = "optimizer";
  require_object(j, path);
  reject_unknown_keys(j, path, {"population", "elite_fraction", "iterations", "initial_spread", "smoothing",
                                "seed", "restarts", "reevaluation_scale"});
  OptimizerConfig c;
  if (j.contains("population")) c.population = j.at("population").get<std::size_t>();
  c.elite_fraction = number_or(j, "elite_fraction", c.elite_fraction, path);
  if (j.contains("iterations")) c.iterations = j.at("iterations").get<int>();
  c.initial_spread = number_or(j, "initial_spread", c.initial_spread, path);
  c.smoothing = number_or(j, "smoothing", c.smoothing, path);
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("restarts")) c.restarts = j.at("restarts").get<int>();
  c.reevaluation_scale = number_or(j, "reevaluation_scale", c.reevaluation_scale, path);
  c.validate();
  return c;
}

namespace {

constexpr std::uint64_t kReevalTag = 0x7e5a11ULL;
constexpr std::uint64_t kSelectTag = 0x5e1ec7ULL;

std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return mix_seed(seed ^ mix_seed(a ^ mix_seed(b)));
}

// Evaluates all candidates under one seed; non-finite values are dropped with
// a warning. Returns the index of the best finite value, ties to the lowest.
std::size_t evaluate_batch(const Objective& objective, const std::vector<std::vector<double>>& params,
                           std::uint64_t seed, OptimizerResult& res, std::vector<Estimate>& values) {
  values.assign(params.size(), Estimate{});
  parallel_for(params.size(), [&](std::size_t i) { values[i] = objective(params[i], seed, 1.0); });
  res.evaluations += params.size();
  std::size_t best = params.size();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!std::isfinite(values[i].value)) {
      res.warnings.push_back("discarded a non-finite objective sample");
      values[i].value = -std::numeric_limits<double>::infinity();
      continue;
    }
    if (best == params.size() || values[i].value > values[best].value) best = i;
  }
  return best;
}

void reevaluate(const Objective& objective, const OptimizerConfig& cfg, OptimizerResult& res) {
  res.best = objective(res.best_params, derive(cfg.seed, kReevalTag), cfg.reevaluation_scale);
  ++res.evaluations;
  if (!std::isfinite(res.best.value)) throw OptimizerError("optimizer: re-evaluation of the best parameters is non-finite");
}

}  // namespace

OptimizerResult optimize_enumeration(const Objective& objective, const std::vector<std::vector<double>>& candidates,
                                     const OptimizerConfig& cfg) {
  if (candidates.empty()) throw ConfigError("optimizer: no candidates to enumerate");
  OptimizerResult res;
  std::vector<Estimate> values;
  const std::size_t best = evaluate_batch(objective, candidates, derive(cfg.seed, kSelectTag), res, values);
  if (best == candidates.size()) throw OptimizerError("optimizer: every objective sample was non-finite");
  res.best_params = candidates[best];
  res.history.push_back({0, 0, values[best].value});
  reevaluate(objective, cfg, res);
  return res;
}

OptimizerResult optimize_cem(const Objective& objective, const std::vector<double>& lower,
                             const std::vector<double>& upper, const OptimizerConfig& cfg) {
  cfg.validate();
  const std::size_t n = lower.size();
  if (n == 0 || upper.size() != n) throw ConfigError("optimizer: bad search box");
  OptimizerResult res;
  const auto n_elite = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(cfg.elite_fraction * static_cast<double>(cfg.population))));
  std::vector<std::vector<double>> finalists;

  for (int r = 0; r < cfg.restarts; ++r) {
    RngStream rng(derive(cfg.seed, 0xce0ULL, static_cast<std::uint64_t>(r)), 0);
    std::vector<double> mean(n), sd(n);
    for (std::size_t c = 0; c < n; ++c) {
      const double w = upper[c] - lower[c];
      mean[c] = r == 0 ? 0.5 * (lower[c] + upper[c]) : lower[c] + w * rng.uniform();
      sd[c] = cfg.initial_spread * w;
    }
    std::vector<double> best_seen;
    double best_seen_value = -std::numeric_limits<double>::infinity();
    bool any_finite = false;
    for (int it = 0; it < cfg.iterations; ++it) {
      std::vector<std::vector<double>> pop(cfg.population, std::vector<double>(n));
      for (auto& p : pop)
        for (std::size_t c = 0; c < n; ++c) p[c] = std::clamp(mean[c] + sd[c] * rng.normal(), lower[c], upper[c]);
      std::vector<Estimate> values;
      const std::size_t best =
          evaluate_batch(objective, pop, derive(cfg.seed, static_cast<std::uint64_t>(r), static_cast<std::uint64_t>(it) + 1),
                         res, values);
      if (best == pop.size()) continue;
      any_finite = true;
      std::vector<std::size_t> order(pop.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return values[a].value > values[b].value; });
      std::size_t kept = 0;
      std::vector<double> em(n, 0.0), ev(n, 0.0);
      for (std::size_t e = 0; e < n_elite && e < order.size(); ++e) {
        if (!std::isfinite(values[order[e]].value)) break;
        for (std::size_t c = 0; c < n; ++c) em[c] += pop[order[e]][c];
        ++kept;
      }
      for (double& v : em) v /= static_cast<double>(kept);
      for (std::size_t e = 0; e < kept; ++e)
        for (std::size_t c = 0; c < n; ++c) ev[c] += (pop[order[e]][c] - em[c]) * (pop[order[e]][c] - em[c]);
      for (std::size_t c = 0; c < n; ++c) {
        mean[c] = cfg.smoothing * em[c] + (1.0 - cfg.smoothing) * mean[c];
        sd[c] = cfg.smoothing * std::sqrt(ev[c] / static_cast<double>(kept)) + (1.0 - cfg.smoothing) * sd[c];
      }
      if (values[best].value > best_seen_value) {
        best_seen_value = values[best].value;
        best_seen = pop[best];
      }
      res.history.push_back({r, it, best_seen_value});
    }
    if (!any_finite) continue;
    finalists.push_back(best_seen);
    finalists.push_back(mean);
  }
  if (finalists.empty()) throw OptimizerError("optimizer: every objective sample was non-finite");
  // Values seen during the search carry selection bias; pick among the
  // finalists with one common seed, then re-evaluate the winner afresh.
  std::vector<Estimate> values;
  const std::size_t best = evaluate_batch(objective, finalists, derive(cfg.seed, kSelectTag), res, values);
  if (best == finalists.size()) throw OptimizerError("optimizer: every objective sample was non-finite");
  res.best_params = finalists[best];
  reevaluate(objective, cfg, res);
  return res;
}

OptimizerResult optimize_coordinate(const Objective& objective,
                                    const std::vector<std::vector<std::vector<double>>>& choices,
                                    std::vector<std::size_t> start, const OptimizerConfig& cfg) {
  const std::size_t n = choices.size();
  if (n == 0 || start.size() != n) throw ConfigError("optimizer: bad coordinate search");
  auto assemble = [&](const std::vector<std::size_t>& idx) {
    std::vector<double> p;
    for (std::size_t c = 0; c < n; ++c) p.insert(p.end(), choices[c][idx[c]].begin(), choices[c][idx[c]].end());
    return p;
  };
  OptimizerResult res;
  for (int sweep = 0; sweep < cfg.iterations; ++sweep) {
    bool changed = false;
    const std::uint64_t seed = derive(cfg.seed, 0xc00dULL, static_cast<std::uint64_t>(sweep));
    for (std::size_t c = 0; c < n; ++c) {
      std::vector<std::vector<double>> batch;
      for (std::size_t v = 0; v < choices[c].size(); ++v) {
        auto idx = start;
        idx[c] = v;
        batch.push_back(assemble(idx));
      }
      std::vector<Estimate> values;
      const std::size_t best = evaluate_batch(objective, batch, seed, res, values);
      if (best == batch.size()) throw OptimizerError("optimizer: every objective sample was non-finite");
      // Keep the incumbent unless the challenger is strictly better.
      if (best != start[c] && values[best].value > values[start[c]].value) {
        start[c] = best;
        changed = true;
      }
      res.history.push_back({0, sweep, values[start[c]].value});
    }
    if (!changed) break;
  }
  res.best_params = assemble(start);
  reevaluate(objective, cfg, res);
  return res;
}

OptimizerResult optimize_policy(const Objective& objective, const PolicyFamily& family, const OptimizerConfig& cfg) {
  cfg.validate();
  const bool finite = family.actions.kind() == ActionSet::Kind::Finite;
  const auto grid = family.actions.grid();
  if (family.kind == PolicyFamily::Kind::Constant && finite) return optimize_enumeration(objective, grid, cfg);
  if (family.kind == PolicyFamily::Kind::PiecewiseConstantInTime && finite) {
    const auto w = static_cast<std::size_t>(family.windows);
    // Best time-constant policy first, then window-by-window improvement.
    std::vector<std::vector<double>> constants;
    for (const auto& a : grid) {
      std::vector<double> p;
      for (std::size_t i = 0; i < w; ++i) p.insert(p.end(), a.begin(), a.end());
      constants.push_back(p);
    }
    OptimizerResult first;
    std::vector<Estimate> values;
    const std::size_t best = evaluate_batch(objective, constants, derive(cfg.seed, kSelectTag), first, values);
    if (best == constants.size()) throw OptimizerError("optimizer: every objective sample was non-finite");
    std::vector<std::vector<std::vector<double>>> choices(w, grid);
    auto res = optimize_coordinate(objective, choices, std::vector<std::size_t>(w, best), cfg);
    res.evaluations += first.evaluations;
    res.warnings.insert(res.warnings.begin(), first.warnings.begin(), first.warnings.end());
    return res;
  }
  return optimize_cem(objective, family.lower(), family.upper(), cfg);
}

}  // namespace mfergodic

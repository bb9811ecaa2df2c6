#include "mfergodic/value.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "json_util.hpp"
#include "mfergodic/errors.hpp"
#include "mfergodic/parallel.hpp"

namespace mfergodic {

using nlohmann::json;
using namespace detail;

namespace {

std::uint64_t derive(std::uint64_t seed, std::uint64_t tag) { return mix_seed(seed ^ mix_seed(tag)); }

constexpr std::uint64_t kSelectTag = 0x5e1ec7ULL;
constexpr std::uint64_t kReevalTag = 0x7e5a11ULL;

json estimate_json(const Estimate& e) { return json{{"estimate", e.value}, {"stderr", e.std_err}}; }

void warn_if_not_dissipative(const ModelSpec& spec, std::vector<std::string>& warnings) {
  if (!spec.affine && !spec.supplied_eta) return;
  if (!dissipativity_margin(spec).passed)
    warnings.push_back("dissipativity check failed (eta <= 0); long-horizon estimates are unreliable");
}

}  // namespace

// -- Configuration ---------------------------------------------------------------

void SimConfig::validate() const {
  if (particles < 2) throw ConfigError("sim.particles: must be >= 2");
  if (!(dt > 0.0)) throw ConfigError("sim.dt: must be > 0");
  if (replicas < 2) throw ConfigError("sim.replicas: must be >= 2 (stderr needs two replicas)");
  if (!(truncation_tol > 0.0 && truncation_tol < 1.0)) throw ConfigError("sim.truncation_tol: must lie in (0, 1)");
}

SimConfig SimConfig::scaled(double replica_factor) const {
  SimConfig s = *this;
  s.replicas = std::max<std::size_t>(2, static_cast<std::size_t>(std::llround(replicas * replica_factor)));
  return s;
}

json SimConfig::to_json() const {
  return json{{"particles", particles}, {"dt", dt}, {"replicas", replicas}, {"truncation_tol", truncation_tol}};
}

SimConfig SimConfig::from_json(const json& j) { return from_json(j, SimConfig{}); }

SimConfig SimConfig::from_json(const json& j, const SimConfig& defaults) {
  const std::string path = "sim";
  require_object(j, path);
  reject_unknown_keys(j, path, {"particles", "dt", "replicas", "truncation_tol"});
  SimConfig s = defaults;
  if (j.contains("particles")) s.particles = j.at("particles").get<std::size_t>();
  s.dt = number_or(j, "dt", s.dt, path);
  if (j.contains("replicas")) s.replicas = j.at("replicas").get<std::size_t>();
  s.truncation_tol = number_or(j, "truncation_tol", s.truncation_tol, path);
  s.validate();
  return s;
}

double truncation_horizon(double beta, double dt, double rel_tol) {
  if (!(beta > 0.0)) throw ConfigError("beta: must be > 0");
  const double T = std::log(1.0 / rel_tol) / beta;
  return std::max(1.0, std::ceil(T / dt - 1e-9)) * dt;
}

// -- Replica runs ------------------------------------------------------------------

EnsembleFactory from_law(const InitialLaw& law, std::size_t particles) {
  return [law, particles](std::size_t, RngStream& rng) { return sample_initial(law, particles, rng); };
}

ReplicaBatch run_replicas(const ModelSpec& spec, const Policy& policy, const EnsembleFactory& init,
                          std::size_t replicas, double T, double dt, std::uint64_t seed, bool keep_final) {
  ReplicaBatch b;
  b.dt = dt;
  b.rewards.resize(replicas);
  if (keep_final) b.finals.resize(replicas);
  parallel_for(replicas, [&](std::size_t r) {
    RngStream init_rng(seed, 2 * r + 1), dyn(seed, 2 * r);
    Ensemble e = init(r, init_rng);
    auto tr = simulate(spec, e, policy, {T, dt, 1, true}, dyn);
    b.rewards[r] = std::move(tr.mean_reward);
    if (keep_final) b.finals[r] = std::move(tr.final);
  });
  return b;
}

std::vector<double> discounted_integrals(const ReplicaBatch& batch, double beta, double T, bool close_tail) {
  const std::size_t n = step_count(T, batch.dt);
  std::vector<double> out;
  for (const auto& f : batch.rewards) {
    if (f.size() < n + 1) throw ConfigError("discounted_integrals: reward path shorter than T");
    const double q = std::exp(-beta * batch.dt);
    double w = 1.0, s = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double w_next = w * q;
      s += 0.5 * batch.dt * (w * f[k] + w_next * f[k + 1]);
      w = w_next;
    }
    // Tail past the truncation horizon, closed with the last recorded reward.
    out.push_back(close_tail ? s + w * f[n] / beta : s);
  }
  return out;
}

std::vector<double> plain_integrals(const ReplicaBatch& batch, double T) {
  const std::size_t n = step_count(T, batch.dt);
  std::vector<double> out;
  for (const auto& f : batch.rewards) {
    if (f.size() < n + 1) throw ConfigError("plain_integrals: reward path shorter than T");
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += 0.5 * batch.dt * (f[k] + f[k + 1]);
    out.push_back(s);
  }
  return out;
}

Estimate discounted_reward(const ModelSpec& spec, const Policy& policy, const InitialLaw& mu0, double beta,
                           const SimConfig& sim, std::uint64_t seed) {
  if (!(beta > 0.0)) throw ConfigError("beta: must be > 0");
  sim.validate();
  const double T = truncation_horizon(beta, sim.dt, sim.truncation_tol);
  const auto batch = run_replicas(spec, policy, from_law(mu0, sim.particles), sim.replicas, T, sim.dt, seed);
  return mean_and_stderr(discounted_integrals(batch, beta, T, true));
}

SweepSamples discounted_sweep(const ModelSpec& spec, const std::vector<Policy>& candidates, const InitialLaw& mu0,
                              const std::vector<double>& betas, const SimConfig& sim, std::uint64_t seed) {
  const double beta_min = *std::min_element(betas.begin(), betas.end());
  const double T_max = truncation_horizon(beta_min, sim.dt, sim.truncation_tol);
  SweepSamples out;
  for (const auto& p : candidates) {
    const auto batch = run_replicas(spec, p, from_law(mu0, sim.particles), sim.replicas, T_max, sim.dt, seed);
    std::vector<std::vector<double>> per_beta;
    for (double b : betas) per_beta.push_back(discounted_integrals(batch, b, truncation_horizon(b, sim.dt, sim.truncation_tol), true));
    out.push_back(std::move(per_beta));
  }
  return out;
}

// -- Discounted value ----------------------------------------------------------------

json DiscountedValue::to_json() const {
  return json{{"beta", beta},
              {"mu0", mu0.to_json()},
              {"estimate", estimate.value},
              {"stderr", estimate.std_err},
              {"truncation_T", truncation_T},
              {"truncation_bound", truncation_bound},
              {"best_policy", best_policy.to_json()},
              {"warnings", warnings}};
}

DiscountedValue value_discounted(const ModelSpec& spec, const InitialLaw& mu0, double beta, const PolicyFamily& family,
                                 const OptimizerConfig& opt, const SimConfig& sim, std::uint64_t seed) {
  if (!(beta > 0.0)) throw ConfigError("beta: must be > 0");
  sim.validate();
  DiscountedValue v;
  v.beta = beta;
  v.mu0 = mu0;
  v.truncation_T = truncation_horizon(beta, sim.dt, sim.truncation_tol);
  v.truncation_bound = lipschitz_constants(spec).M_f * std::exp(-beta * v.truncation_T) / beta;
  warn_if_not_dissipative(spec, v.warnings);
  if (family.enumerable() && family.actions.grid().size() == 1) {
    v.best_policy = family.constant_candidates().front();
    const double T = v.truncation_T;
    const auto batch = run_replicas(spec, v.best_policy, from_law(mu0, sim.particles), sim.replicas, T, sim.dt, seed);
    v.samples = discounted_integrals(batch, beta, T, true);
    v.estimate = mean_and_stderr(v.samples);
    return v;
  }
  OptimizerConfig oc = opt;
  oc.seed = mix_seed(seed ^ opt.seed);
  const Objective objective = [&](std::span<const double> p, std::uint64_t s, double scale) {
    return discounted_reward(spec, family.make(p), mu0, beta, sim.scaled(scale), s);
  };
  const auto res = optimize_policy(objective, family, oc);
  v.best_policy = family.make(res.best_params);
  v.estimate = res.best;
  v.warnings.insert(v.warnings.end(), res.warnings.begin(), res.warnings.end());
  return v;
}

std::vector<DiscountedValue> value_discounted_schedule(const ModelSpec& spec, const InitialLaw& mu0,
                                                       const std::vector<double>& betas, const PolicyFamily& family,
                                                       const OptimizerConfig& opt, const SimConfig& sim,
                                                       std::uint64_t seed,
                                                       std::vector<std::vector<Estimate>>* selection) {
  if (betas.empty()) throw ConfigError("beta_schedule: must be nonempty");
  for (double b : betas)
    if (!(b > 0.0)) throw ConfigError("beta_schedule: entries must be > 0");
  sim.validate();
  std::vector<DiscountedValue> out;
  if (!family.enumerable()) {
    for (std::size_t j = 0; j < betas.size(); ++j)
      out.push_back(value_discounted(spec, mu0, betas[j], family, opt, sim, derive(seed, j)));
    return out;
  }
  const double M_f = lipschitz_constants(spec).M_f;
  const auto candidates = family.constant_candidates();
  std::vector<std::string> warnings;
  warn_if_not_dissipative(spec, warnings);

  std::vector<std::size_t> winner(betas.size(), 0);
  std::map<std::size_t, std::vector<std::vector<double>>> final_samples;
  if (candidates.size() == 1) {
    final_samples[0] = discounted_sweep(spec, candidates, mu0, betas, sim, seed)[0];
    if (selection) {
      selection->assign(1, {});
      for (const auto& s : final_samples[0]) selection->front().push_back(mean_and_stderr(s));
    }
  } else {
    const std::uint64_t sel = derive(mix_seed(seed ^ opt.seed), kSelectTag);
    const auto by_candidate = discounted_sweep(spec, candidates, mu0, betas, sim, sel);
    for (std::size_t j = 0; j < betas.size(); ++j)
      for (std::size_t c = 1; c < candidates.size(); ++c)
        if (mean_and_stderr(by_candidate[c][j]).value > mean_and_stderr(by_candidate[winner[j]][j]).value) winner[j] = c;
    if (selection) {
      selection->assign(candidates.size(), {});
      for (std::size_t c = 0; c < candidates.size(); ++c)
        for (const auto& s : by_candidate[c]) (*selection)[c].push_back(mean_and_stderr(s));
    }
    const std::uint64_t fresh = derive(mix_seed(seed ^ opt.seed), kReevalTag);
    for (std::size_t w : winner)
      if (!final_samples.count(w))
        final_samples[w] =
            discounted_sweep(spec, {candidates[w]}, mu0, betas, sim.scaled(opt.reevaluation_scale), fresh)[0];
  }
  for (std::size_t j = 0; j < betas.size(); ++j) {
    DiscountedValue v;
    v.beta = betas[j];
    v.mu0 = mu0;
    v.truncation_T = truncation_horizon(betas[j], sim.dt, sim.truncation_tol);
    v.truncation_bound = M_f * std::exp(-betas[j] * v.truncation_T) / betas[j];
    v.best_policy = candidates[winner[j]];
    v.samples = final_samples[winner[j]][j];
    v.estimate = mean_and_stderr(v.samples);
    v.warnings = warnings;
    out.push_back(std::move(v));
  }
  return out;
}

// -- Finite horizon ----------------------------------------------------------------

TerminalReward TerminalReward::from_terms(std::vector<RewardTerm> terms) {
  TerminalReward g;
  g.name = "library";
  g.eval = [terms = std::move(terms)](const Ensemble& e) {
    const auto s = e.summary();
    double v = 0.0;
    for (const auto& t : terms) {
      if (t.on_mean) {
        v += t.value(s.mean[t.coord]);
        continue;
      }
      double acc = 0.0;
      for (std::size_t i = 0; i < e.size(); ++i) acc += t.value(e.positions[i * e.dim + t.coord]);
      v += acc / static_cast<double>(e.size());
    }
    return v;
  };
  return g;
}

TerminalReward TerminalReward::mean_abs_penalty(double weight) {
  TerminalReward g;
  g.name = "mean_abs_penalty";
  g.eval = [weight](const Ensemble& e) {
    const auto s = e.summary();
    double n = 0.0;
    for (double m : s.mean) n += m * m;
    return -weight * std::sqrt(n);
  };
  return g;
}

json FiniteHorizonValue::to_json() const {
  return json{{"T", T}, {"terminal", terminal}, {"estimate", estimate.value}, {"stderr", estimate.std_err},
              {"best_policy", best_policy.to_json()}, {"warnings", warnings}};
}

std::vector<double> finite_horizon_samples(const ModelSpec& spec, const Policy& policy, const InitialLaw& mu0, double T,
                                           const TerminalReward& g, const SimConfig& sim, std::uint64_t seed) {
  const auto batch = run_replicas(spec, policy, from_law(mu0, sim.particles), sim.replicas, T, sim.dt, seed, !g.is_zero());
  auto v = plain_integrals(batch, T);
  if (!g.is_zero())
    for (std::size_t r = 0; r < v.size(); ++r) v[r] += g(batch.finals[r]);
  return v;
}

FiniteHorizonValue finite_horizon_value(const ModelSpec& spec, const InitialLaw& mu0, double T, const TerminalReward& g,
                                        const PolicyFamily& family, const OptimizerConfig& opt, const SimConfig& sim,
                                        std::uint64_t seed) {
  if (!(T > 0.0)) throw ConfigError("T: must be > 0");
  sim.validate();
  FiniteHorizonValue v;
  v.T = T;
  v.terminal = g.name;
  PolicyFamily fam = family;
  fam.horizon = T;
  if (fam.enumerable() && fam.actions.grid().size() == 1) {
    v.best_policy = fam.constant_candidates().front();
    v.estimate = mean_and_stderr(finite_horizon_samples(spec, v.best_policy, mu0, T, g, sim, seed));
    return v;
  }
  OptimizerConfig oc = opt;
  oc.seed = mix_seed(seed ^ opt.seed);
  const Objective objective = [&](std::span<const double> p, std::uint64_t s, double scale) {
    return mean_and_stderr(finite_horizon_samples(spec, fam.make(p), mu0, T, g, sim.scaled(scale), s));
  };
  const auto res = optimize_policy(objective, fam, oc);
  v.best_policy = fam.make(res.best_params);
  v.estimate = res.best;
  v.warnings = res.warnings;
  return v;
}

// -- Dynamic programming residual ---------------------------------------------------

json DppResidual::to_json() const {
  return json{{"lhs", estimate_json(lhs)}, {"rhs", estimate_json(rhs)}, {"residual", estimate_json(residual)},
              {"scale", scale}, {"relative", relative()}};
}

DppResidual dpp_residual(const ModelSpec& spec, const InitialLaw& mu0, double beta, double t_split,
                         const PolicyFamily& family, const OptimizerConfig& opt, const SimConfig& sim,
                         std::uint64_t seed) {
  if (!(t_split > 0.0)) throw ConfigError("t_split: must be > 0");
  sim.validate();
  DppResidual out;
  out.scale = lipschitz_constants(spec).M_f / beta;
  const auto lhs = value_discounted(spec, mu0, beta, family, opt, sim, derive(seed, 1));
  out.lhs = lhs.estimate;

  // Both sides range over the same family; for searched families the right
  // side is restricted to the policy found on the left.
  const std::vector<Policy> candidates =
      family.enumerable() ? family.constant_candidates() : std::vector<Policy>{lhs.best_policy};
  const double T_tail = truncation_horizon(beta, sim.dt, sim.truncation_tol);
  const double decay = std::exp(-beta * t_split);
  const std::uint64_t s_first = derive(seed, 2), s_restart = derive(seed, 3);

  double best_value = -std::numeric_limits<double>::infinity();
  for (const auto& p : candidates) {
    auto first = run_replicas(spec, p, from_law(mu0, sim.particles), sim.replicas, t_split, sim.dt, s_first, true);
    const auto head = discounted_integrals(first, beta, t_split);
    for (auto& e : first.finals) e.time = 0.0;
    // v^beta at each terminal cloud, restarting from the cloud itself.
    std::vector<std::vector<double>> tails;
    for (const auto& q : candidates) {
      const EnsembleFactory restart = [&](std::size_t r, RngStream&) { return first.finals[r]; };
      const auto batch = run_replicas(spec, q, restart, sim.replicas, T_tail, sim.dt, s_restart);
      tails.push_back(discounted_integrals(batch, beta, T_tail, true));
    }
    std::size_t q_best = 0;
    for (std::size_t q = 1; q < tails.size(); ++q)
      if (mean_and_stderr(tails[q]).value > mean_and_stderr(tails[q_best]).value) q_best = q;
    std::vector<double> total(head.size());
    for (std::size_t r = 0; r < head.size(); ++r) total[r] = head[r] + decay * tails[q_best][r];
    const auto est = mean_and_stderr(total);
    if (est.value > best_value) {
      best_value = est.value;
      out.rhs = est;
    }
  }
  out.residual = {std::abs(out.lhs.value - out.rhs.value), combined_stderr(out.lhs, out.rhs)};
  return out;
}

}  // namespace mfergodic

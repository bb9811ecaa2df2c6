#include "mfergodic/ergodic.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include <Eigen/Dense>

#include "json_util.hpp"
#include "mfergodic/errors.hpp"
#include "mfergodic/parallel.hpp"

namespace mfergodic {

using nlohmann::json;
using namespace detail;

namespace {

std::uint64_t derive(std::uint64_t seed, std::uint64_t tag) { return mix_seed(seed ^ mix_seed(tag)); }

json estimate_json(const Estimate& e) { return json{{"estimate", e.value}, {"stderr", e.std_err}}; }

Estimate estimate_from_json(const json& j) { return {j.at("estimate").get<double>(), j.at("stderr").get<double>()}; }

json estimates_json(const std::vector<Estimate>& v) {
  json a = json::array();
  for (const auto& e : v) a.push_back(estimate_json(e));
  return a;
}

std::vector<Estimate> estimates_from_json(const json& j) {
  std::vector<Estimate> v;
  for (const auto& e : j) v.push_back(estimate_from_json(e));
  return v;
}

// Intercept of a weighted combination; per-replica when all sample sets have
// the same length (keeps correlations between betas), otherwise by variance
// propagation of independent estimates.
Estimate combine(const std::vector<double>& w, const std::vector<std::vector<double>>& samples,
                 const std::vector<double>& scale) {
  const std::size_t n = samples.front().size();
  bool aligned = n >= 2;
  for (const auto& s : samples) aligned = aligned && s.size() == n;
  if (aligned) {
    std::vector<double> per(n, 0.0);
    for (std::size_t j = 0; j < samples.size(); ++j)
      for (std::size_t r = 0; r < n; ++r) per[r] += w[j] * scale[j] * samples[j][r];
    return mean_and_stderr(per);
  }
  Estimate e;
  double var = 0.0;
  for (std::size_t j = 0; j < samples.size(); ++j) {
    const auto s = mean_and_stderr(samples[j]);
    e.value += w[j] * scale[j] * s.value;
    var += std::pow(w[j] * scale[j] * s.std_err, 2);
  }
  e.std_err = std::sqrt(var);
  return e;
}

Estimate combine(const std::vector<double>& w, const std::vector<Estimate>& values) {
  Estimate e;
  double var = 0.0;
  for (std::size_t j = 0; j < values.size(); ++j) {
    e.value += w[j] * values[j].value;
    var += std::pow(w[j] * values[j].std_err, 2);
  }
  e.std_err = std::sqrt(var);
  return e;
}

int effective_degree(int requested, std::size_t points) {
  return std::max(1, std::min(requested, static_cast<int>(points) - 2));
}

// Flags a sequence that moves both up and down by more than 3 combined stderr.
bool non_monotone(const std::vector<Estimate>& v) {
  bool up = false, down = false;
  for (std::size_t j = 1; j < v.size(); ++j) {
    const double d = v[j].value - v[j - 1].value;
    const double s = 3.0 * combined_stderr(v[j], v[j - 1]);
    up = up || d > s;
    down = down || d < -s;
  }
  return up && down;
}

std::string fmt(double x) {
  std::ostringstream os;
  os << x;
  return os.str();
}

// Trapezoid integral of e^{-beta t} f on [0, T]; paths shorter than the
// horizon count as zero beyond their end (the coupled runs stop once the
// remaining gap is negligible).
double discount_path(const std::vector<double>& f, double dt, double beta, double T) {
  const std::size_t n = std::min(step_count(T, dt), f.size() - 1);
  const double q = std::exp(-beta * dt);
  double w = 1.0, s = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double w_next = w * q;
    s += 0.5 * dt * (w * f[k] + w_next * f[k + 1]);
    w = w_next;
  }
  return s;
}

// Reward-difference paths f(mu_t) - f(nu_t) for two laws driven by the same
// Brownian increments, one per replica.
std::vector<std::vector<double>> coupled_reward_gap(const ModelSpec& spec, const Policy& policy, const InitialLaw& a,
                                                    const InitialLaw& b, const SimConfig& sim, double T_max,
                                                    std::uint64_t seed, double stop_gap) {
  std::vector<std::vector<double>> out(sim.replicas);
  const std::size_t steps = step_count(T_max, sim.dt);
  parallel_for(sim.replicas, [&](std::size_t r) {
    RngStream init(seed, 2 * r + 1), dyn(seed, 2 * r);
    auto init_b = init.substream(1);
    Ensemble ea = sample_initial(a, sim.particles, init), eb = sample_initial(b, sim.particles, init_b);
    std::vector<double> noise(ea.positions.size());
    auto& path = out[r];
    path.reserve(steps + 1);
    for (std::size_t k = 0; k < steps; ++k) {
      if (stop_gap > 0.0 && k % 10 == 0) {
        double g = 0.0;
        for (std::size_t i = 0; i < ea.positions.size(); ++i) g += std::pow(ea.positions[i] - eb.positions[i], 2);
        if (g / static_cast<double>(ea.size()) <= stop_gap) {
          path.push_back(mean_reward(spec, ea, policy) - mean_reward(spec, eb, policy));
          return;
        }
      }
      fill_normals(dyn, noise);
      const double fa = euler_step(spec, ea, policy, sim.dt, noise);
      const double fb = euler_step(spec, eb, policy, sim.dt, noise);
      ea.time = eb.time = static_cast<double>(k + 1) * sim.dt;
      path.push_back(fa - fb);
    }
    path.push_back(mean_reward(spec, ea, policy) - mean_reward(spec, eb, policy));
  });
  return out;
}

std::pair<double, double> law_mean_sd(const InitialLaw& law) {
  const auto s = law.summary();
  return {s.mean[0], s.sd()};
}

std::size_t lower_cell(const std::vector<double>& g, double x, double& w, bool& outside) {
  if (g.size() == 1) {
    w = 0.0;
    outside = outside || x != g[0];
    return 0;
  }
  if (x < g.front() || x > g.back()) outside = true;
  const double xc = std::clamp(x, g.front(), g.back());
  auto it = std::upper_bound(g.begin(), g.end(), xc);
  std::size_t i = it == g.begin() ? 0 : static_cast<std::size_t>(it - g.begin()) - 1;
  i = std::min(i, g.size() - 2);
  w = (xc - g[i]) / (g[i + 1] - g[i]);
  return i;
}

}  // namespace

// -- Configuration ---------------------------------------------------------------

void ErgodicConfig::validate() const {
  if (betas.size() < 3) throw ConfigError("betas: need at least 3 discount rates");
  for (std::size_t j = 0; j < betas.size(); ++j) {
    if (!(betas[j] > 0.0)) throw ConfigError("betas: entries must be > 0");
    if (j > 0 && !(betas[j] < betas[j - 1])) throw ConfigError("betas: must be strictly decreasing");
  }
  if (lambda_fit_degree < 1) throw ConfigError("lambda_fit_degree: must be >= 1");
  if (!std::is_sorted(grid_means.begin(), grid_means.end()) ||
      std::adjacent_find(grid_means.begin(), grid_means.end()) != grid_means.end())
    throw ConfigError("grid_means: must be strictly increasing");
  if (!std::is_sorted(grid_sds.begin(), grid_sds.end()) ||
      std::adjacent_find(grid_sds.begin(), grid_sds.end()) != grid_sds.end())
    throw ConfigError("grid_sds: must be strictly increasing");
  if (!grid_sds.empty() && grid_sds.front() < 0.0) throw ConfigError("grid_sds: must be >= 0");
  if (grid_means.empty() != grid_sds.empty()) throw ConfigError("grid_means/grid_sds: give both or neither");
  probe_sim.validate();
  if (!(lipschitz_w2_floor > 0.0)) throw ConfigError("lipschitz_w2_floor: must be > 0");
}

json ErgodicConfig::to_json() const {
  json probes_json = json::array();
  for (const auto& p : probes) {
    auto j = p.law.to_json();
    j["name"] = p.id;
    probes_json.push_back(j);
  }
  return json{{"betas", betas}, {"lambda_fit_degree", lambda_fit_degree}, {"grid_means", grid_means},
              {"grid_sds", grid_sds}, {"probes", probes_json}, {"probe_sim", probe_sim.to_json()},
              {"phi_tol", phi_tol}, {"lipschitz_w2_floor", lipschitz_w2_floor}};
}

ErgodicConfig ErgodicConfig::from_json(const json& j) {
  const std::string path = "ergodic";
  require_object(j, path);
  reject_unknown_keys(j, path, {"betas", "lambda_fit_degree", "grid_means", "grid_sds", "probes", "probe_sim",
                                "phi_tol", "lipschitz_w2_floor"});
  ErgodicConfig c;
  if (j.contains("betas")) c.betas = get_vector(j.at("betas"), path + ".betas");
  if (j.contains("lambda_fit_degree")) c.lambda_fit_degree = j.at("lambda_fit_degree").get<int>();
  if (j.contains("grid_means")) c.grid_means = get_vector(j.at("grid_means"), path + ".grid_means");
  if (j.contains("grid_sds")) c.grid_sds = get_vector(j.at("grid_sds"), path + ".grid_sds");
  if (j.contains("probes")) {
    for (const auto& p : j.at("probes")) {
      const auto law = InitialLaw::from_json(p, p.contains("at")     ? p.at("at").size()
                                                : p.contains("mean") ? p.at("mean").size()
                                                                     : 1);
      if (law.name.empty()) throw ConfigError(path + ".probes: every probe needs a \"name\"");
      c.probes.push_back({law.name, law});
    }
  }
  if (j.contains("probe_sim")) c.probe_sim = SimConfig::from_json(j.at("probe_sim"), c.probe_sim);
  c.phi_tol = number_or(j, "phi_tol", c.phi_tol, path);
  c.lipschitz_w2_floor = number_or(j, "lipschitz_w2_floor", c.lipschitz_w2_floor, path);
  c.validate();
  return c;
}

std::vector<double> intercept_weights(const std::vector<double>& x, int degree) {
  const auto n = static_cast<Eigen::Index>(x.size());
  if (degree < 0 || n < degree + 1) throw ConfigError("fit: not enough points for the polynomial degree");
  Eigen::MatrixXd X(n, degree + 1);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int k = 0; k <= degree; ++k) X(i, k) = std::pow(x[static_cast<std::size_t>(i)], k);
  const Eigen::MatrixXd pinv = X.completeOrthogonalDecomposition().pseudoInverse();
  std::vector<double> w(x.size());
  for (Eigen::Index i = 0; i < n; ++i) w[static_cast<std::size_t>(i)] = pinv(0, i);
  return w;
}

double law_w2(const InitialLaw& a, const InitialLaw& b) {
  auto gaussian_like = [](const InitialLaw& l) {
    return l.dim() == 1 && (l.kind == InitialLaw::Kind::PointMass || l.kind == InitialLaw::Kind::Gaussian);
  };
  if (gaussian_like(a) && gaussian_like(b)) {
    const auto [ma, sa] = law_mean_sd(a);
    const auto [mb, sb] = law_mean_sd(b);
    return std::hypot(ma - mb, sa - sb);
  }
  const auto ca = quantile_cloud(a, 1024), cb = quantile_cloud(b, 1024);
  return w2_distance(ca.measure(), cb.measure()).value;
}

// -- Ergodic pair ------------------------------------------------------------------

PhiLookup ErgodicPair::phi(double mean, double sd) const {
  if (!has_grid()) throw ConfigError("phi: the pair has no (mean, sd) probe grid");
  PhiLookup out;
  double wm = 0.0, ws = 0.0;
  const std::size_t im = lower_cell(grid_means, mean, wm, out.extrapolated);
  const std::size_t is = lower_cell(grid_sds, sd, ws, out.extrapolated);
  const std::size_t ns = grid_sds.size();
  auto at = [&](std::size_t i, std::size_t k) {
    i = std::min(i, grid_means.size() - 1);
    k = std::min(k, ns - 1);
    return phi_table[i * ns + k].value.value;
  };
  out.value = (1 - wm) * ((1 - ws) * at(im, is) + ws * at(im, is + 1)) +
              wm * ((1 - ws) * at(im + 1, is) + ws * at(im + 1, is + 1));
  return out;
}

PhiLookup ErgodicPair::phi(const MeasureSummary& s) const { return phi(s.mean[0], s.sd()); }

PhiLookup ErgodicPair::phi(const std::string& id) const {
  for (const auto& e : phi_table)
    if (e.id == id) return {e.value.value, false};
  throw ConfigError("phi: unknown probe id '" + id + "'");
}

PhiLookup ErgodicPair::phi(const InitialLaw& law) const {
  if (law.dim() != 1) throw ConfigError("phi: the interpolant is one-dimensional");
  const auto [m, sd] = law_mean_sd(law);
  return phi(m, sd);
}

TerminalReward ErgodicPair::terminal_reward(std::shared_ptr<std::atomic<std::size_t>> extrapolations) const {
  auto self = std::make_shared<const ErgodicPair>(*this);
  TerminalReward g;
  g.name = "phi_hat";
  g.eval = [self, extrapolations](const Ensemble& e) {
    const auto r = self->phi(e.summary());
    if (r.extrapolated && extrapolations) ++*extrapolations;
    return r.value;
  };
  return g;
}

json ErgodicPair::to_json() const {
  json table = json::array();
  for (const auto& e : phi_table)
    table.push_back({{"id", e.id}, {"law", e.law.to_json()}, {"mean", e.mean}, {"sd", e.sd}, {"on_grid", e.on_grid},
                     {"by_beta", estimates_json(e.by_beta)}, {"phi", estimate_json(e.value)},
                     {"richardson", estimate_json(e.richardson)}});
  return json{{"lambda", estimate_json(lambda)},
              {"betas", betas},
              {"lambda_by_beta", estimates_json(lambda_by_beta)},
              {"value_at_origin", estimates_json(value_at_origin)},
              {"policy_by_beta", policy_by_beta},
              {"fit_degree", fit_degree},
              {"grid_means", grid_means},
              {"grid_sds", grid_sds},
              {"phi_table", table},
              {"lipschitz_by_beta", lipschitz_by_beta},
              {"warnings", warnings}};
}

ErgodicPair ErgodicPair::from_json(const json& j) {
  require_object(j, "pair");
  ErgodicPair p;
  try {
    p.lambda = estimate_from_json(j.at("lambda"));
    p.betas = j.at("betas").get<std::vector<double>>();
    p.lambda_by_beta = estimates_from_json(j.at("lambda_by_beta"));
    p.value_at_origin = estimates_from_json(j.at("value_at_origin"));
    p.policy_by_beta = j.at("policy_by_beta").get<std::vector<std::string>>();
    p.fit_degree = j.at("fit_degree").get<int>();
    p.grid_means = j.at("grid_means").get<std::vector<double>>();
    p.grid_sds = j.at("grid_sds").get<std::vector<double>>();
    for (const auto& e : j.at("phi_table")) {
      PhiEntry pe;
      pe.id = e.at("id").get<std::string>();
      const auto& lj = e.at("law");
      const std::size_t d = lj.contains("at") ? lj.at("at").size() : lj.contains("mean") ? lj.at("mean").size() : 1;
      pe.law = InitialLaw::from_json(lj, d);
      pe.mean = e.at("mean").get<double>();
      pe.sd = e.at("sd").get<double>();
      pe.on_grid = e.at("on_grid").get<bool>();
      pe.by_beta = estimates_from_json(e.at("by_beta"));
      pe.value = estimate_from_json(e.at("phi"));
      pe.richardson = estimate_from_json(e.at("richardson"));
      p.phi_table.push_back(std::move(pe));
    }
    p.lipschitz_by_beta = j.at("lipschitz_by_beta").get<std::vector<double>>();
    p.warnings = j.at("warnings").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("pair: malformed ergodic pair JSON (") + e.what() + ")");
  }
  if (p.has_grid() && p.phi_table.size() < p.grid_means.size() * p.grid_sds.size())
    throw ConfigError("pair.phi_table: fewer entries than the probe grid");
  return p;
}

ErgodicPair vanishing_discount(const ModelSpec& spec, const InitialLaw& origin, const PolicyFamily& family,
                               const ErgodicConfig& cfg, const OptimizerConfig& opt, const SimConfig& sim,
                               std::uint64_t seed) {
  cfg.validate();
  sim.validate();
  const auto& betas = cfg.betas;
  const std::size_t nb = betas.size();
  ErgodicPair pair;
  pair.betas = betas;

  // lambda from beta v^beta(delta_0).
  std::vector<std::vector<Estimate>> selection;
  const auto vd = value_discounted_schedule(spec, origin, betas, family, opt, sim, derive(seed, 1), &selection);
  std::vector<std::vector<double>> samples;
  for (std::size_t j = 0; j < nb; ++j) {
    pair.value_at_origin.push_back(vd[j].estimate);
    pair.lambda_by_beta.push_back({betas[j] * vd[j].estimate.value, betas[j] * vd[j].estimate.std_err});
    pair.policy_by_beta.push_back(vd[j].best_policy.describe());
    samples.push_back(vd[j].samples);
    for (const auto& w : vd[j].warnings)
      if (std::find(pair.warnings.begin(), pair.warnings.end(), w) == pair.warnings.end()) pair.warnings.push_back(w);
  }
  pair.fit_degree = effective_degree(cfg.lambda_fit_degree, nb);
  pair.lambda = combine(intercept_weights(betas, pair.fit_degree), samples, betas);
  if (non_monotone(pair.lambda_by_beta))
    pair.warnings.push_back("lambda_by_beta is not monotone beyond 3 stderr; the Monte Carlo budget may be too small");

  // Probe measures.
  std::vector<PhiEntry> entries;
  if (!cfg.grid_means.empty()) {
    if (spec.dim != 1) throw ConfigError("grid_means: the (mean, sd) probe grid needs a one-dimensional model");
    for (double m : cfg.grid_means)
      for (double s : cfg.grid_sds) {
        PhiEntry e;
        e.id = "g_m" + fmt(m) + "_s" + fmt(s);
        e.law = s == 0.0 ? InitialLaw::point_mass({m}, e.id) : InitialLaw::gaussian({m}, {s * s}, e.id);
        e.on_grid = true;
        entries.push_back(std::move(e));
      }
    pair.grid_means = cfg.grid_means;
    pair.grid_sds = cfg.grid_sds;
  }
  for (const auto& p : cfg.probes) {
    if (p.law.dim() != spec.dim) throw ConfigError("probes." + p.id + ": dimension does not match the model");
    PhiEntry e;
    e.id = p.id;
    e.law = p.law;
    entries.push_back(std::move(e));
  }
  for (auto& e : entries) {
    const auto s = e.law.summary();
    e.mean = s.mean[0];
    e.sd = s.sd();
  }

  // Candidate policies per beta and their v^beta(delta_0).
  const bool enumerable = family.enumerable();
  const auto all = enumerable ? family.constant_candidates() : std::vector<Policy>{};
  std::vector<Policy> policies;
  std::vector<std::vector<std::size_t>> cand_by_beta(nb);
  if (enumerable) {
    policies = all;
    for (auto& c : cand_by_beta)
      for (std::size_t i = 0; i < all.size(); ++i) c.push_back(i);
  } else {
    std::map<std::string, std::size_t> index;
    for (std::size_t j = 0; j < nb; ++j) {
      const auto key = vd[j].best_policy.to_json().dump();
      auto [it, fresh] = index.emplace(key, policies.size());
      if (fresh) policies.push_back(vd[j].best_policy);
      cand_by_beta[j].push_back(it->second);
    }
  }

  // Coupled runs of (probe, origin) under common noise give v_p(mu) - v_p(delta_0)
  // with small variance. A run stops once 2 L_f sqrt(gap) / eta, which bounds
  // the rest of the discounted reward difference, is below phi_tol.
  const auto lc = lipschitz_constants(spec);
  const double phi_tol = cfg.phi_tol > 0.0 ? cfg.phi_tol : 1e-3 * lc.M_f;
  double eta = 0.0;
  try {
    eta = dissipativity_margin(spec).eta;
  } catch (const MissingConstantsError&) {
  }
  const SimConfig& ps = cfg.probe_sim;
  const double T_max = truncation_horizon(betas.back(), ps.dt, ps.truncation_tol);
  const std::uint64_t probe_seed = derive(seed, 2);
  const std::size_t np = policies.size();
  // delta[probe][policy][beta][replica]
  std::vector<std::vector<std::vector<std::vector<double>>>> delta(entries.size(),
                                                                  std::vector<std::vector<std::vector<double>>>(np));
  parallel_for(entries.size() * np, [&](std::size_t k) {
    const std::size_t e = k / np, p = k % np;
    const bool early = eta > 0.0 && lc.L_f > 0.0 && policies[p].state_independent();
    const double stop_gap = early ? std::pow(phi_tol * eta / (2.0 * lc.L_f), 2) : 0.0;
    const auto paths = coupled_reward_gap(spec, policies[p], entries[e].law, origin, ps, T_max, probe_seed, stop_gap);
    auto& d = delta[e][p];
    d.assign(nb, std::vector<double>(paths.size()));
    for (std::size_t j = 0; j < nb; ++j) {
      const double T = truncation_horizon(betas[j], ps.dt, ps.truncation_tol);
      for (std::size_t r = 0; r < paths.size(); ++r) d[j][r] = discount_path(paths[r], ps.dt, betas[j], T);
    }
  });

  std::size_t disagreements = 0;
  for (std::size_t e = 0; e < entries.size(); ++e) {
    auto& entry = entries[e];
    for (std::size_t j = 0; j < nb; ++j) {
      const auto& cands = cand_by_beta[j];
      Estimate phi;
      if (!enumerable || cands.size() == 1) {
        phi = mean_and_stderr(delta[e][cands[0]][j]);
      } else {
        // phi(mu) = max_p [v_p(delta_0) + D_p(mu)] - max_p v_p(delta_0).
        std::size_t p_star = cands[0], q_star = cands[0];
        auto score = [&](std::size_t p) { return selection[p][j].value + mean_and_stderr(delta[e][p][j]).value; };
        for (std::size_t p : cands) {
          if (score(p) > score(p_star)) p_star = p;
          if (selection[p][j].value > selection[q_star][j].value) q_star = p;
        }
        const auto d = mean_and_stderr(delta[e][p_star][j]);
        phi.value = score(p_star) - selection[q_star][j].value;
        phi.std_err = p_star == q_star ? d.std_err
                                       : std::sqrt(d.std_err * d.std_err + std::pow(selection[p_star][j].std_err, 2) +
                                                   std::pow(selection[q_star][j].std_err, 2));
      }
      entry.by_beta.push_back(phi);
    }
    entry.value = entry.by_beta.back();
    const double ba = betas[nb - 2], bb = betas[nb - 1];
    const auto& pa = entry.by_beta[nb - 2];
    const auto& pb = entry.by_beta[nb - 1];
    entry.richardson = {(ba * pb.value - bb * pa.value) / (ba - bb),
                        std::hypot(ba * pb.std_err, bb * pa.std_err) / (ba - bb)};
    if (std::abs(entry.richardson.value - entry.value.value) > 3.0 * combined_stderr(entry.richardson, entry.value))
      ++disagreements;
  }
  if (disagreements > 0)
    pair.warnings.push_back(std::to_string(disagreements) +
                            " probe(s): Richardson-extrapolated phi differs from the smallest-beta value by more than 3 "
                            "stderr");

  // Empirical Lipschitz constant of phi^beta in W2, the origin included.
  std::vector<InitialLaw> laws{origin};
  for (const auto& e : entries) laws.push_back(e.law);
  std::vector<std::vector<double>> w2(laws.size(), std::vector<double>(laws.size(), 0.0));
  for (std::size_t a = 0; a < laws.size(); ++a)
    for (std::size_t b = a + 1; b < laws.size(); ++b) w2[a][b] = law_w2(laws[a], laws[b]);
  for (std::size_t j = 0; j < nb; ++j) {
    double L = 0.0;
    auto val = [&](std::size_t a) { return a == 0 ? 0.0 : entries[a - 1].by_beta[j].value; };
    for (std::size_t a = 0; a < laws.size(); ++a)
      for (std::size_t b = a + 1; b < laws.size(); ++b)
        if (w2[a][b] >= cfg.lipschitz_w2_floor) L = std::max(L, std::abs(val(a) - val(b)) / w2[a][b]);
    pair.lipschitz_by_beta.push_back(L);
  }
  if (nb >= 2 && !entries.empty()) {
    const double La = pair.lipschitz_by_beta[nb - 2], Lb = pair.lipschitz_by_beta[nb - 1];
    if (std::abs(La - Lb) > 0.25 * std::max(La, Lb))
      pair.warnings.push_back("empirical Lipschitz constant of phi moves by more than 25% between the two smallest betas");
  }
  pair.phi_table = std::move(entries);
  return pair;
}

// -- Long-run average --------------------------------------------------------------

LraWindow LraWindow::from_eta(double eta, double dt) {
  if (!(eta > 0.0)) throw ConfigError("eta: long-run windows need a positive dissipativity margin");
  return {std::ceil(50.0 / eta / dt - 1e-9) * dt, std::ceil(10.0 / eta / dt - 1e-9) * dt};
}

json LongRunAverage::to_json() const {
  return json{{"estimate", estimate.value}, {"stderr", estimate.std_err}, {"T", T}, {"burn_in", burn_in}};
}

namespace {

double window_average(const std::vector<double>& f, double dt, double burn_in, double T) {
  const auto k0 = static_cast<std::size_t>(std::llround(burn_in / dt));
  const auto k1 = static_cast<std::size_t>(std::llround(T / dt));
  double s = 0.0;
  for (std::size_t k = k0; k < k1; ++k) s += 0.5 * (f[k] + f[k + 1]);
  return s / static_cast<double>(k1 - k0);
}

}  // namespace

LongRunAverage long_run_average(const ModelSpec& spec, const Policy& policy, const InitialLaw& mu0, double T,
                                double burn_in, const SimConfig& sim, std::uint64_t seed) {
  if (!(burn_in >= 0.0 && burn_in < T)) throw ConfigError("burn_in: must satisfy 0 <= burn_in < T");
  sim.validate();
  step_count(T, sim.dt);
  LongRunAverage out;
  out.T = T;
  out.burn_in = burn_in;
  const auto batch = run_replicas(spec, policy, from_law(mu0, sim.particles), sim.replicas, T, sim.dt, seed);
  for (const auto& f : batch.rewards) out.samples.push_back(window_average(f, sim.dt, burn_in, T));
  out.estimate = mean_and_stderr(out.samples);
  return out;
}

// -- Abelian-Tauberian check --------------------------------------------------------

PolicyFamily windowed(const PolicyFamily& family, double T, int windows) {
  if (family.kind == PolicyFamily::Kind::PiecewiseConstantInTime) {
    PolicyFamily f = family;
    f.horizon = T;
    return f;
  }
  if (family.kind == PolicyFamily::Kind::Constant && family.enumerable() && family.actions.grid().size() == 1)
    return family;
  if (family.kind != PolicyFamily::Kind::Constant)
    throw ConfigError("family: only constant families have a time-windowed version");
  return PolicyFamily::windowed(family.actions, T, windows);
}

double TauberianRoutes::max_relative_gap() const {
  const double v[3] = {discount.value, horizon.value, lra.value};
  double g = 0.0;
  for (int a = 0; a < 3; ++a)
    for (int b = a + 1; b < 3; ++b) {
      const double scale = 0.5 * (std::abs(v[a]) + std::abs(v[b]));
      g = std::max(g, scale > 0.0 ? std::abs(v[a] - v[b]) / scale : std::abs(v[a] - v[b]));
    }
  return g;
}

json TauberianRoutes::to_json() const {
  return json{{"law", law},
              {"discount", estimate_json(discount)},
              {"horizon", estimate_json(horizon)},
              {"lra", estimate_json(lra)},
              {"discount_by_beta", estimates_json(discount_by_beta)},
              {"horizon_by_T", estimates_json(horizon_by_T)},
              {"lra_policy", lra_policy},
              {"max_relative_gap", max_relative_gap()}};
}

json TauberianConfig::to_json() const {
  json j{{"betas", betas}, {"horizons", horizons}, {"lambda_fit_degree", lambda_fit_degree},
         {"horizon_windows", horizon_windows}};
  if (horizon_sim) j["horizon_sim"] = horizon_sim->to_json();
  if (lra_window) j["lra_window"] = {{"T", lra_window->T}, {"burn_in", lra_window->burn_in}};
  if (second_law) {
    auto l = second_law->law.to_json();
    l["name"] = second_law->id;
    j["second_law"] = l;
  }
  return j;
}

TauberianConfig TauberianConfig::from_json(const json& j) {
  const std::string path = "tauberian";
  require_object(j, path);
  reject_unknown_keys(j, path,
                      {"betas", "horizons", "lambda_fit_degree", "horizon_windows", "horizon_sim", "lra_window",
                       "second_law"});
  TauberianConfig c;
  if (j.contains("betas")) c.betas = get_vector(j.at("betas"), path + ".betas");
  if (j.contains("horizons")) c.horizons = get_vector(j.at("horizons"), path + ".horizons");
  if (j.contains("lambda_fit_degree")) c.lambda_fit_degree = j.at("lambda_fit_degree").get<int>();
  if (j.contains("horizon_windows")) c.horizon_windows = j.at("horizon_windows").get<int>();
  if (j.contains("horizon_sim")) c.horizon_sim = SimConfig::from_json(j.at("horizon_sim"));
  if (j.contains("lra_window")) {
    const auto& w = j.at("lra_window");
    c.lra_window = LraWindow{get_number(w.at("T"), path + ".lra_window.T"),
                             get_number(w.at("burn_in"), path + ".lra_window.burn_in")};
  }
  if (j.contains("second_law")) {
    const auto& l = j.at("second_law");
    const auto law = InitialLaw::from_json(l, l.contains("at") ? l.at("at").size() : l.contains("mean") ? l.at("mean").size() : 1);
    c.second_law = NamedLaw{law.name.empty() ? law.label() : law.name, law};
  }
  if (c.betas.size() < 2 || c.horizons.size() < 2) throw ConfigError(path + ": schedules need at least 2 points");
  if (c.horizon_windows < 1) throw ConfigError(path + ".horizon_windows: must be >= 1");
  return c;
}

TauberianRoutes tauberian_routes(const ModelSpec& spec, const NamedLaw& mu0, const PolicyFamily& family,
                                 const TauberianConfig& cfg, const OptimizerConfig& opt, const SimConfig& sim,
                                 std::uint64_t seed) {
  if (cfg.betas.empty() || cfg.horizons.empty()) throw ConfigError("tauberian: schedules must be nonempty");
  TauberianRoutes out;
  out.law = mu0.id;

  // Route 1: beta v^beta(mu0) -> lambda.
  const auto vd = value_discounted_schedule(spec, mu0.law, cfg.betas, family, opt, sim, derive(seed, 1));
  std::vector<std::vector<double>> samples;
  for (std::size_t j = 0; j < vd.size(); ++j) {
    out.discount_by_beta.push_back({cfg.betas[j] * vd[j].estimate.value, cfg.betas[j] * vd[j].estimate.std_err});
    samples.push_back(vd[j].samples);
  }
  const int deg = effective_degree(cfg.lambda_fit_degree, cfg.betas.size());
  out.discount = cfg.betas.size() == 1 ? out.discount_by_beta[0]
                                        : combine(intercept_weights(cfg.betas, deg), samples, cfg.betas);

  // Route 2: v^T(0, mu0) / T = lambda + c / T + o(1/T).
  const SimConfig hs = cfg.horizon_sim.value_or(sim);
  std::vector<double> inv_T;
  for (std::size_t k = 0; k < cfg.horizons.size(); ++k) {
    const double T = cfg.horizons[k];
    const auto v = finite_horizon_value(spec, mu0.law, T, TerminalReward::zero(),
                                        windowed(family, T, cfg.horizon_windows), opt, hs, derive(seed, 100 + k));
    out.horizon_by_T.push_back({v.estimate.value / T, v.estimate.std_err / T});
    inv_T.push_back(1.0 / T);
  }
  out.horizon = cfg.horizons.size() == 1 ? out.horizon_by_T[0] : combine(intercept_weights(inv_T, 1), out.horizon_by_T);

  // Route 3: sup over the family of the long-run average.
  const LraWindow win = cfg.lra_window ? *cfg.lra_window : LraWindow::from_eta(dissipativity_margin(spec).eta, sim.dt);
  OptimizerConfig oc = opt;
  oc.seed = mix_seed(derive(seed, 3) ^ opt.seed);
  const Objective objective = [&](std::span<const double> p, std::uint64_t s, double scale) {
    return long_run_average(spec, family.make(p), mu0.law, win.T, win.burn_in, sim.scaled(scale), s).estimate;
  };
  if (family.enumerable() && family.actions.grid().size() == 1) {
    const auto p = family.constant_candidates().front();
    out.lra = long_run_average(spec, p, mu0.law, win.T, win.burn_in, sim, derive(seed, 3)).estimate;
    out.lra_policy = p.describe();
  } else {
    const auto res = optimize_policy(objective, family, oc);
    out.lra = res.best;
    out.lra_policy = family.make(res.best_params).describe();
  }
  return out;
}

json TauberianReport::to_json() const {
  json j{{"first", first.to_json()}, {"betas", betas}, {"horizons", horizons}, {"warnings", warnings}};
  if (second) j["second"] = second->to_json();
  return j;
}

std::string TauberianReport::csv() const {
  std::ostringstream os;
  os.precision(12);
  os << "law,route,x,estimate,stderr\n";
  auto rows = [&](const TauberianRoutes& r, const std::vector<double>& betas, const std::vector<double>& Ts) {
    for (std::size_t j = 0; j < r.discount_by_beta.size() && j < betas.size(); ++j)
      os << r.law << ",discount," << betas[j] << ',' << r.discount_by_beta[j].value << ','
         << r.discount_by_beta[j].std_err << '\n';
    for (std::size_t k = 0; k < r.horizon_by_T.size() && k < Ts.size(); ++k)
      os << r.law << ",horizon," << Ts[k] << ',' << r.horizon_by_T[k].value << ',' << r.horizon_by_T[k].std_err
         << '\n';
    os << r.law << ",lra,inf," << r.lra.value << ',' << r.lra.std_err << '\n';
  };
  rows(first, betas, horizons);
  if (second) rows(*second, betas, horizons);
  return os.str();
}

TauberianReport abelian_tauberian_check(const ModelSpec& spec, const NamedLaw& mu0, const PolicyFamily& family,
                                        const TauberianConfig& cfg, const OptimizerConfig& opt,
                                        const SimConfig& sim, std::uint64_t seed) {
  TauberianReport rep;
  rep.betas = cfg.betas;
  rep.horizons = cfg.horizons;
  rep.first = tauberian_routes(spec, mu0, family, cfg, opt, sim, derive(seed, 11));
  if (cfg.second_law) {
    rep.second = tauberian_routes(spec, *cfg.second_law, family, cfg, opt, sim, derive(seed, 12));
    const std::pair<const char*, Estimate TauberianRoutes::*> routes[] = {
        {"discount", &TauberianRoutes::discount}, {"horizon", &TauberianRoutes::horizon}, {"lra", &TauberianRoutes::lra}};
    for (const auto& [name, m] : routes) {
      const auto& a = rep.first.*m;
      const auto& b = (*rep.second).*m;
      if (std::abs(a.value - b.value) > 3.0 * combined_stderr(a, b))
        rep.warnings.push_back(std::string(name) + " route: the two initial laws disagree by more than 3 stderr");
    }
  }
  if (rep.first.max_relative_gap() > 0.03) rep.warnings.push_back("routes disagree by more than 3%");
  return rep;
}

// -- Fixed-point residual -----------------------------------------------------------

json FixedPointResidual::to_json() const {
  return json{{"T", T},
              {"lhs", estimate_json(lhs)},
              {"rhs", estimate_json(rhs)},
              {"residual", estimate_json(residual)},
              {"relative", relative},
              {"extrapolations", extrapolations},
              {"warnings", warnings}};
}

FixedPointResidual fixed_point_residual(const ModelSpec& spec, const ErgodicPair& pair, const NamedLaw& mu, double T,
                                        const PolicyFamily& family, const OptimizerConfig& opt, const SimConfig& sim,
                                        std::uint64_t seed) {
  if (!(T > 0.0)) throw ConfigError("T: must be > 0");
  if (!pair.has_grid()) throw ConfigError("pair: fixed-point residual needs the (mean, sd) phi grid");
  FixedPointResidual out;
  out.T = T;
  double phi_mu = 0.0, phi_se = 0.0;
  bool found = false;
  for (const auto& e : pair.phi_table)
    if (e.id == mu.id) {
      phi_mu = e.value.value;
      phi_se = e.value.std_err;
      found = true;
    }
  if (!found) {
    const auto r = pair.phi(mu.law);
    phi_mu = r.value;
    if (r.extrapolated) out.warnings.push_back("phi(mu) lies outside the probe grid; value clamped");
  }
  out.lhs = {phi_mu + pair.lambda.value * T, std::hypot(phi_se, pair.lambda.std_err * T)};
  auto counter = std::make_shared<std::atomic<std::size_t>>(0);
  const int windows = family.kind == PolicyFamily::Kind::PiecewiseConstantInTime ? family.windows : 4;
  const auto v = finite_horizon_value(spec, mu.law, T, pair.terminal_reward(counter), windowed(family, T, windows), opt,
                                      sim, seed);
  out.rhs = v.estimate;
  out.warnings.insert(out.warnings.end(), v.warnings.begin(), v.warnings.end());
  out.extrapolations = counter->load();
  if (out.extrapolations > 0)
    out.warnings.push_back(std::to_string(out.extrapolations) +
                           " terminal measure(s) fell outside the phi grid and were clamped");
  out.residual = {out.lhs.value - out.rhs.value, combined_stderr(out.lhs, out.rhs)};
  const double scale = std::abs(phi_mu) + std::abs(pair.lambda.value) * T;
  out.relative = scale > 0.0 ? std::abs(out.residual.value) / scale : std::abs(out.residual.value);
  return out;
}

// -- Verification ------------------------------------------------------------------

json VerificationReport::to_json() const {
  return json{{"lra", lra.to_json()}, {"slope", estimate_json(slope)}, {"lambda_hat", lambda_hat},
              {"extrapolations", extrapolations}};
}

VerificationReport verification_run(const ModelSpec& spec, const Policy& feedback, const InitialLaw& mu0,
                                    const ErgodicPair& pair, const LraWindow& window, const SimConfig& sim,
                                    std::uint64_t seed) {
  if (!(window.burn_in >= 0.0 && window.burn_in < window.T))
    throw ConfigError("burn_in: must satisfy 0 <= burn_in < T");
  if (!pair.has_grid()) throw ConfigError("pair: verification needs the (mean, sd) phi grid");
  sim.validate();
  VerificationReport out;
  out.lambda_hat = pair.lambda.value;
  out.lra.T = window.T;
  out.lra.burn_in = window.burn_in;
  const std::size_t stride = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.1 / sim.dt)));
  std::vector<double> slopes(sim.replicas);
  out.lra.samples.resize(sim.replicas);
  std::atomic<std::size_t> extrapolations{0};
  parallel_for(sim.replicas, [&](std::size_t r) {
    RngStream init(seed, 2 * r + 1), dyn(seed, 2 * r);
    const Ensemble e0 = sample_initial(mu0, sim.particles, init);
    // Compensated process phi(mu_t) + int_0^t f - lambda t, regressed on t.
    double st = 0.0, sy = 0.0, stt = 0.0, sty = 0.0;
    std::size_t n = 0;
    const Observer obs = [&](const Observation& o) {
      if (o.time < window.burn_in - 1e-9) return;
      const auto p = pair.phi(o.summary);
      if (p.extrapolated) ++extrapolations;
      const double y = p.value + o.running_reward - pair.lambda.value * o.time;
      st += o.time;
      sy += y;
      stt += o.time * o.time;
      sty += o.time * y;
      ++n;
    };
    const auto tr = simulate(spec, e0, feedback, {window.T, sim.dt, stride, true}, dyn, {obs});
    const double nn = static_cast<double>(n);
    slopes[r] = (nn * sty - st * sy) / (nn * stt - st * st);
    out.lra.samples[r] = window_average(tr.mean_reward, sim.dt, window.burn_in, window.T);
  });
  out.lra.estimate = mean_and_stderr(out.lra.samples);
  out.slope = mean_and_stderr(slopes);
  out.slope.std_err = std::hypot(out.slope.std_err, pair.lambda.std_err);
  out.extrapolations = extrapolations.load();
  return out;
}

}  // namespace mfergodic

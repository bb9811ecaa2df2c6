#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfergodic/estimate.hpp"
#include "mfergodic/model.hpp"
#include "mfergodic/optimizer.hpp"
#include "mfergodic/particle.hpp"
#include "mfergodic/policy.hpp"
#include "mfergodic/value.hpp"

namespace mfergodic {

struct NamedLaw {
  std::string id;
  InitialLaw law;
};

struct ErgodicConfig {
  std::vector<double> betas{0.4, 0.2, 0.1, 0.05};
  /// Degree of the least-squares polynomial in beta whose intercept is lambda
  /// (capped at schedule size - 2).
  int lambda_fit_degree = 2;
  /// Gaussian probe grid on (mean, sd) for the phi interpolant (d = 1).
  std::vector<double> grid_means{-2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0};
  std::vector<double> grid_sds{0.0, 0.5, 0.75, 1.0, 1.25, 1.5};
  std::vector<NamedLaw> probes;  // extra named probes
  SimConfig probe_sim{1024, 1e-2, 4, 1e-3};
  /// Coupled probe runs stop once the remaining discounted reward gap is
  /// provably below phi_tol (<= 0: 1e-3 * M_f).
  double phi_tol = 0.0;
  /// Pairs closer than this in W2 are left out of the Lipschitz ratio.
  double lipschitz_w2_floor = 0.25;

  void validate() const;
  nlohmann::json to_json() const;
  static ErgodicConfig from_json(const nlohmann::json& j);
};

struct PhiEntry {
  std::string id;
  InitialLaw law;
  double mean = 0.0, sd = 0.0;  // summary of the law (coordinate 0)
  bool on_grid = false;
  std::vector<Estimate> by_beta;
  Estimate value;       // smallest beta
  Estimate richardson;  // linear extrapolation from the two smallest betas
};

/// Value of the interpolant and whether the query left the grid's hull.
struct PhiLookup {
  double value = 0.0;
  bool extrapolated = false;
};

struct ErgodicPair {
  Estimate lambda;
  std::vector<double> betas;
  std::vector<Estimate> lambda_by_beta;  // beta * v^beta(delta_0)
  std::vector<Estimate> value_at_origin;  // v^beta(delta_0)
  std::vector<std::string> policy_by_beta;
  int fit_degree = 1;
  /// Grid probes come first, mean-major (entry im * grid_sds.size() + is),
  /// then the named probes.
  std::vector<PhiEntry> phi_table;
  std::vector<double> grid_means, grid_sds;
  std::vector<double> lipschitz_by_beta;
  std::vector<std::string> warnings;

  /// Bilinear in (mean, sd) on the Gaussian grid; clamps outside its hull.
  PhiLookup phi(double mean, double sd) const;
  PhiLookup phi(const MeasureSummary& s) const;
  /// Table value for a probe id, or the interpolant at the law's summary.
  PhiLookup phi(const std::string& id) const;
  PhiLookup phi(const InitialLaw& law) const;
  bool has_grid() const { return !grid_means.empty() && !grid_sds.empty(); }

  /// g = phi-hat(summary of the terminal cloud); out-of-hull lookups are
  /// counted in *extrapolations when given.
  TerminalReward terminal_reward(std::shared_ptr<std::atomic<std::size_t>> extrapolations = nullptr) const;

  nlohmann::json to_json() const;
  static ErgodicPair from_json(const nlohmann::json& j);
};

/// Least-squares polynomial fit y ~ sum_k c_k x^k; returns the weights w with
/// c_0 = sum_j w_j y_j.
std::vector<double> intercept_weights(const std::vector<double>& x, int degree);

ErgodicPair vanishing_discount(const ModelSpec& spec, const InitialLaw& origin, const PolicyFamily& family,
                               const ErgodicConfig& cfg, const OptimizerConfig& opt, const SimConfig& sim,
                               std::uint64_t seed);

/// Default horizons from the dissipativity margin: T = 50/eta, burn-in 10/eta.
struct LraWindow {
  double T = 0.0;
  double burn_in = 0.0;
  static LraWindow from_eta(double eta, double dt);
};

struct LongRunAverage {
  Estimate estimate;
  double T = 0.0, burn_in = 0.0;
  std::vector<double> samples;  // per replica
  nlohmann::json to_json() const;
};

LongRunAverage long_run_average(const ModelSpec& spec, const Policy& policy, const InitialLaw& mu0, double T,
                                double burn_in, const SimConfig& sim, std::uint64_t seed);

struct TauberianRoutes {
  std::string law;
  Estimate discount;  // fitted beta v^beta -> 0
  Estimate horizon;   // fitted v^T / T -> infinity
  Estimate lra;       // sup over the family of the long-run average
  std::vector<Estimate> discount_by_beta;
  std::vector<Estimate> horizon_by_T;  // v^T / T
  std::string lra_policy;

  double max_relative_gap() const;
  nlohmann::json to_json() const;
};

struct TauberianConfig {
  std::vector<double> betas{0.4, 0.2, 0.1, 0.05};
  std::vector<double> horizons{5.0, 10.0, 20.0, 40.0};
  int lambda_fit_degree = 2;
  int horizon_windows = 4;
  std::optional<SimConfig> horizon_sim;  // defaults to the main sim
  std::optional<LraWindow> lra_window;   // defaults from eta
  std::optional<NamedLaw> second_law;

  nlohmann::json to_json() const;
  static TauberianConfig from_json(const nlohmann::json& j);
};

struct TauberianReport {
  TauberianRoutes first;
  std::optional<TauberianRoutes> second;
  std::vector<double> betas, horizons;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
  std::string csv() const;  // law, route, x, estimate, stderr
};

TauberianRoutes tauberian_routes(const ModelSpec& spec, const NamedLaw& mu0, const PolicyFamily& family,
                                 const TauberianConfig& cfg, const OptimizerConfig& opt, const SimConfig& sim,
                                 std::uint64_t seed);

TauberianReport abelian_tauberian_check(const ModelSpec& spec, const NamedLaw& mu0, const PolicyFamily& family,
                                        const TauberianConfig& cfg, const OptimizerConfig& opt,
                                        const SimConfig& sim, std::uint64_t seed);

struct FixedPointResidual {
  double T = 0.0;
  Estimate lhs;  // phi(mu) + lambda T
  Estimate rhs;  // sup E[int_0^T f + phi(mu_T)]
  Estimate residual;
  double relative = 0.0;  // |residual| / (|phi(mu)| + |lambda| T)
  std::size_t extrapolations = 0;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
};

/// The finite-horizon side ranges over the time-windowed version of `family`.
FixedPointResidual fixed_point_residual(const ModelSpec& spec, const ErgodicPair& pair, const NamedLaw& mu, double T,
                                        const PolicyFamily& family, const OptimizerConfig& opt, const SimConfig& sim,
                                        std::uint64_t seed);

/// Time-windowed family over the same actions (constant families become
/// piecewise constant in time with `windows` windows over [0, T]).
PolicyFamily windowed(const PolicyFamily& family, double T, int windows);

struct VerificationReport {
  LongRunAverage lra;
  Estimate slope;  // d/dt of E phi(mu_t) + E int_0^t f - lambda t over [burn_in, T]
  double lambda_hat = 0.0;
  std::size_t extrapolations = 0;

  nlohmann::json to_json() const;
};

VerificationReport verification_run(const ModelSpec& spec, const Policy& feedback, const InitialLaw& mu0,
                                    const ErgodicPair& pair, const LraWindow& window, const SimConfig& sim,
                                    std::uint64_t seed);

/// W2 between two laws: closed form for 1-d Gaussians and point masses,
/// otherwise between 1024-point quantile clouds.
double law_w2(const InitialLaw& a, const InitialLaw& b);

}  // namespace mfergodic

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfergodic/estimate.hpp"
#include "mfergodic/model.hpp"
#include "mfergodic/optimizer.hpp"
#include "mfergodic/particle.hpp"
#include "mfergodic/policy.hpp"

namespace mfergodic {

/// Monte Carlo budget shared by the value and ergodic routines.
struct SimConfig {
  std::size_t particles = 4096;
  double dt = 1e-2;
  std::size_t replicas = 16;
  /// Discount truncation at T with e^{-beta T} = truncation_tol. The tail is
  /// closed with the last recorded reward, so its error is at most
  /// 2 truncation_tol * M_f / beta.
  double truncation_tol = 1e-3;

  void validate() const;
  SimConfig scaled(double replica_factor) const;
  nlohmann::json to_json() const;
  static SimConfig from_json(const nlohmann::json& j);
  static SimConfig from_json(const nlohmann::json& j, const SimConfig& defaults);
};

/// Smallest multiple of dt with e^{-beta T} <= rel_tol.
double truncation_horizon(double beta, double dt, double rel_tol);

/// Per-replica mean-reward paths on the Euler grid (and terminal clouds when asked).
struct ReplicaBatch {
  double dt = 0.0;
  std::vector<std::vector<double>> rewards;  // [replica][grid point]
  std::vector<Ensemble> finals;
};

/// Replica r draws its initial cloud from stream (seed, 2r + 1) and its
/// Brownian increments from stream (seed, 2r), so results do not depend on
/// the number of worker threads.
using EnsembleFactory = std::function<Ensemble(std::size_t replica, RngStream& rng)>;
ReplicaBatch run_replicas(const ModelSpec& spec, const Policy& policy, const EnsembleFactory& init,
                          std::size_t replicas, double T, double dt, std::uint64_t seed, bool keep_final = false);
EnsembleFactory from_law(const InitialLaw& law, std::size_t particles);

/// Trapezoid integral of e^{-beta t} f(t) over [0, T], one value per replica.
/// With close_tail the rest of [T, inf) is added as e^{-beta T} f(T) / beta.
std::vector<double> discounted_integrals(const ReplicaBatch& batch, double beta, double T, bool close_tail = false);
/// Trapezoid integral of f over [0, T].
std::vector<double> plain_integrals(const ReplicaBatch& batch, double T);

Estimate discounted_reward(const ModelSpec& spec, const Policy& policy, const InitialLaw& mu0, double beta,
                           const SimConfig& sim, std::uint64_t seed);

struct DiscountedValue {
  double beta = 0.0;
  InitialLaw mu0;
  Estimate estimate;
  double truncation_T = 0.0;
  double truncation_bound = 0.0;  // M_f e^{-beta T} / beta
  Policy best_policy;
  std::vector<double> samples;  // per-replica discounted integrals
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
};

/// Discounted integrals of several policies from one law, for a whole beta
/// schedule: each policy is simulated once to the longest truncation horizon
/// and the same reward paths are discounted for every beta.
/// samples[candidate][beta][replica].
using SweepSamples = std::vector<std::vector<std::vector<double>>>;
SweepSamples discounted_sweep(const ModelSpec& spec, const std::vector<Policy>& candidates, const InitialLaw& mu0,
                              const std::vector<double>& betas, const SimConfig& sim, std::uint64_t seed);

DiscountedValue value_discounted(const ModelSpec& spec, const InitialLaw& mu0, double beta,
                                 const PolicyFamily& family, const OptimizerConfig& opt, const SimConfig& sim,
                                 std::uint64_t seed);

/// value_discounted for a whole schedule. Enumerable families simulate every
/// candidate once to the longest truncation horizon and discount the same
/// reward paths for each beta. `selection`, when given, receives the
/// selection-run estimates [candidate][beta] of enumerable families.
std::vector<DiscountedValue> value_discounted_schedule(const ModelSpec& spec, const InitialLaw& mu0,
                                                       const std::vector<double>& betas, const PolicyFamily& family,
                                                       const OptimizerConfig& opt, const SimConfig& sim,
                                                       std::uint64_t seed,
                                                       std::vector<std::vector<Estimate>>* selection = nullptr);

/// Terminal reward g(X_T, mu_T), averaged over the terminal cloud.
struct TerminalReward {
  std::string name = "zero";
  std::function<double(const Ensemble&)> eval;  // empty means g = 0

  double operator()(const Ensemble& e) const { return eval ? eval(e) : 0.0; }
  bool is_zero() const { return !eval; }

  static TerminalReward zero() { return {}; }
  /// Library terms evaluated at each particle (on_mean terms at the mean).
  static TerminalReward from_terms(std::vector<RewardTerm> terms);
  /// -weight * |m(mu_T)| (d = 1 uses the signed mean's magnitude).
  static TerminalReward mean_abs_penalty(double weight);
};

struct FiniteHorizonValue {
  double T = 0.0;
  std::string terminal;
  Estimate estimate;
  Policy best_policy;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
};

/// E[int_0^T f dt + g(X_T, mu_T)] for one policy, per replica.
std::vector<double> finite_horizon_samples(const ModelSpec& spec, const Policy& policy, const InitialLaw& mu0, double T,
                                           const TerminalReward& g, const SimConfig& sim, std::uint64_t seed);

FiniteHorizonValue finite_horizon_value(const ModelSpec& spec, const InitialLaw& mu0, double T,
                                        const TerminalReward& g, const PolicyFamily& family,
                                        const OptimizerConfig& opt, const SimConfig& sim, std::uint64_t seed);

struct DppResidual {
  Estimate lhs;       // v^beta(mu0)
  Estimate rhs;       // sup over the family of the one-step-split right side
  Estimate residual;  // |lhs - rhs|
  double scale = 0.0; // M_f / beta
  double relative() const { return scale > 0.0 ? residual.value / scale : residual.value; }

  nlohmann::json to_json() const;
};

/// Restarts fresh simulations from each replica's terminal cloud at t_split
/// to evaluate v^beta(mu_{t_split}).
DppResidual dpp_residual(const ModelSpec& spec, const InitialLaw& mu0, double beta, double t_split,
                         const PolicyFamily& family, const OptimizerConfig& opt, const SimConfig& sim,
                         std::uint64_t seed);

}  // namespace mfergodic

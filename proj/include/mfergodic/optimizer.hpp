#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfergodic/estimate.hpp"
#include "mfergodic/policy.hpp"

namespace mfergodic {

struct OptimizerConfig {
  std::size_t population = 24;
  double elite_fraction = 0.25;
  int iterations = 12;
  double initial_spread = 0.5;  // fraction of the search box width
  double smoothing = 0.7;       // weight of the new elite statistics
  std::uint64_t seed = 1;
  int restarts = 3;
  /// Replica multiplier for the final selection-free re-evaluation.
  double reevaluation_scale = 2.0;

  void validate() const;
  nlohmann::json to_json() const;
  static OptimizerConfig from_json(const nlohmann::json& j);
};

/// Stochastic objective: value +- stderr for a parameter vector. Calls that
/// share a seed use common random numbers; `budget_scale` multiplies the
/// Monte Carlo sample size.
using Objective = std::function<Estimate(std::span<const double> params, std::uint64_t seed, double budget_scale)>;

struct OptimizerResult {
  std::vector<double> best_params;
  Estimate best;  // re-evaluated with a fresh seed
  struct Step {
    int restart, iteration;
    double best_value;
  };
  std::vector<Step> history;
  std::vector<std::string> warnings;
  std::size_t evaluations = 0;
};

/// Exhaustive search over explicit parameter vectors.
OptimizerResult optimize_enumeration(const Objective& objective, const std::vector<std::vector<double>>& candidates,
                                     const OptimizerConfig& cfg);

/// Cross-entropy method in the box [lower, upper] with cfg.restarts restarts.
OptimizerResult optimize_cem(const Objective& objective, const std::vector<double>& lower,
                             const std::vector<double>& upper, const OptimizerConfig& cfg);

/// Coordinate-wise enumeration over a product of finite per-coordinate sets
/// (sweeps until no coordinate change improves), started from `start`.
OptimizerResult optimize_coordinate(const Objective& objective,
                                    const std::vector<std::vector<std::vector<double>>>& choices,
                                    std::vector<std::size_t> start, const OptimizerConfig& cfg);

/// Dispatch by family: enumeration for constant policies over a finite set,
/// coordinate enumeration for time-windowed policies over a finite set, CEM
/// otherwise.
OptimizerResult optimize_policy(const Objective& objective, const PolicyFamily& family,
                                const OptimizerConfig& cfg);

}  // namespace mfergodic

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfergodic/measure.hpp"

namespace mfergodic {

/// The control action space: a finite list of points or a box with a grid.
class ActionSet {
 public:
  enum class Kind { Finite, Box };

  ActionSet() = default;
  static ActionSet finite(std::vector<std::vector<double>> points);
  static ActionSet box(std::vector<double> lower, std::vector<double> upper, int resolution = 33);
  static ActionSet singleton(std::vector<double> point) { return finite({std::move(point)}); }

  Kind kind() const { return kind_; }
  std::size_t dim() const { return dim_; }
  bool is_singleton() const { return kind_ == Kind::Finite && points_.size() == 1; }

  /// Finite: the listed points. Box: tensor grid with `resolution` points per axis.
  std::vector<std::vector<double>> grid() const;
  /// Copy with a different box resolution (no effect on finite sets).
  ActionSet with_resolution(int resolution) const;
  int resolution() const { return resolution_; }
  const std::vector<double>& lower() const { return lower_; }
  const std::vector<double>& upper() const { return upper_; }

  /// Box: coordinate clamp. Finite: nearest point, ties to the lowest index.
  void project(std::span<double> a) const;
  bool contains(std::span<const double> a, double tol = 1e-12) const;

  nlohmann::json to_json() const;
  static ActionSet from_json(const nlohmann::json& j);

 private:
  Kind kind_ = Kind::Finite;
  std::size_t dim_ = 1;
  std::vector<std::vector<double>> points_;
  std::vector<double> lower_, upper_;
  int resolution_ = 33;
};

/// Bounded Lipschitz scalar profiles used to build rewards.
enum class RewardShape { Constant, Cosine, Tanh, GaussianBump, ClippedQuadratic };

/// amplitude * shape((z - center)) where z is a state coordinate or the
/// corresponding coordinate of the mean. `param` is omega (cosine), scale
/// (tanh), width (Gaussian bump) or the clip level (clipped quadratic).
struct RewardTerm {
  RewardShape shape = RewardShape::Constant;
  double amplitude = 1.0;
  double param = 1.0;
  double center = 0.0;
  std::size_t coord = 0;
  bool on_mean = false;

  double value(double z) const;
  double bound() const;      // sup |value|
  double lipschitz() const;  // sup |value'|
};

/// Reward contribution of the action: <linear, a> - quadratic * |a|^2.
struct ActionReward {
  std::vector<double> linear;
  double quadratic = 0.0;

  double value(std::span<const double> a) const;
  bool is_zero() const;
};

/// b(x, mu, a) = b0 + B x + Bbar m(mu) + G a
/// sigma(x, mu, a) = diag(s0 + S x + Sbar m(mu))   (one noise per coordinate)
/// Matrices are row-major.
struct AffineDynamics {
  std::vector<double> b0, B, Bbar, G;
  std::vector<double> s0, S, Sbar;
};

/// Evaluators for a user-defined model. Constants must then be supplied.
struct CustomEvaluators {
  std::function<void(std::span<const double> x, const MeasureSummary& mu,
                     std::span<const double> a, std::span<double> out)>
      drift;
  /// Writes the diagonal of sigma (length d).
  std::function<void(std::span<const double> x, const MeasureSummary& mu,
                     std::span<const double> a, std::span<double> out)>
      diffusion;
  std::function<double(std::span<const double> x, const MeasureSummary& mu,
                       std::span<const double> a)>
      reward;
};

struct LipschitzConstants {
  double L_bx = 0.0;
  double L_bmu = 0.0;
  double L_sx = 0.0;
  double L_smu = 0.0;
  double M = 0.0;
  double M_f = 0.0;
  double L_f = 0.0;

  nlohmann::json to_json() const;
  static LipschitzConstants from_json(const nlohmann::json& j);
};

class FrozenModel;

struct ModelSpec {
  std::string name = "model";
  std::size_t dim = 1;
  ActionSet actions = ActionSet::singleton({0.0});
  std::optional<AffineDynamics> affine;
  std::vector<RewardTerm> reward_terms;
  ActionReward action_reward;
  std::optional<CustomEvaluators> custom;
  /// Required when `custom` is set.
  std::optional<LipschitzConstants> supplied_constants;
  /// Dissipativity margin for custom models (no analytic route exists).
  std::optional<double> supplied_eta;
  /// Permit sigma == 0 identically.
  bool degenerate_diffusion = false;

  /// Throws ConfigError on shape mismatches or missing pieces.
  void validate() const;

  /// Coefficients with the measure argument frozen at `mu`.
  FrozenModel freeze(const MeasureSummary& mu) const;

  void drift(std::span<const double> x, const MeasureSummary& mu, std::span<const double> a,
             std::span<double> out) const;
  void diffusion(std::span<const double> x, const MeasureSummary& mu, std::span<const double> a,
                 std::span<double> out) const;
  double reward(std::span<const double> x, const MeasureSummary& mu,
                std::span<const double> a) const;

  /// Reward depends on the state only through the terms with on_mean == false.
  bool has_state_reward() const;

  nlohmann::json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);
};

/// Model coefficients at a fixed measure. The explicit Euler scheme evaluates
/// every particle against the measure of the step start, so mean-dependent
/// parts are computed once per step here.
class FrozenModel {
 public:
  FrozenModel(const ModelSpec& spec, const MeasureSummary& mu);

  void drift(const double* x, const double* a, double* out) const;
  void diffusion(const double* x, const double* a, double* out) const;
  double reward(const double* x, const double* a) const;

 private:
  const ModelSpec* spec_;
  MeasureSummary mu_;
  std::size_t d_, k_;
  std::vector<double> drift_offset_;  // b0 + Bbar m
  std::vector<double> sigma_offset_;  // s0 + Sbar m
  double mean_reward_ = 0.0;          // sum of on_mean terms
  bool affine_ = false;
};

// -- Operations --------------------------------------------------------------

/// Exact constants for the affine family; supplied constants otherwise.
/// Throws MissingConstantsError for custom models without constants.
LipschitzConstants lipschitz_constants(const ModelSpec& spec);

struct DissipativityReport {
  std::optional<double> gamma;  // absent for custom models
  double eta = 0.0;
  double K = 0.0;
  std::size_t samples = 0;
  std::size_t violations = 0;
  double worst_violation = 0.0;  // max of lhs - rhs over samples (<= 0 when clean)
  bool passed = false;
  std::string note;

  nlohmann::json to_json() const;
  std::string table() const;
};

/// Second-moment ceiling obtained by replaying the Young-inequality step of
/// the moment estimate with explicit constants (see model.cpp).
double second_moment_ceiling(double eta, double M, double L_sx, double L_smu);

/// Analytic part: gamma, eta = gamma - (L_bmu + L_sx L_smu + L_smu^2 / 2), K.
DissipativityReport dissipativity_margin(const ModelSpec& spec);

/// Sampled part: random pairs of equal-weight clouds and actions. Violations
/// are recorded in the returned report; `eta` defaults to the analytic value.
DissipativityReport sample_check_dissipativity(const ModelSpec& spec, std::size_t n_samples,
                                               std::size_t particle_count, std::uint64_t seed,
                                               std::optional<double> eta = std::nullopt);

/// Left side of the averaged dissipativity inequality for two paired clouds
/// (row-major, same size) and a fixed action, and E|xi - xi'|^2.
struct PairedCloudTerms {
  double lhs = 0.0;
  double mean_sq_gap = 0.0;
};
PairedCloudTerms dissipativity_lhs(const ModelSpec& spec, std::span<const double> xi,
                                   std::span<const double> xi_prime, std::span<const double> a);

/// Analytic check followed by the default sampled check (10^4 samples, 64 particles).
DissipativityReport check_dissipativity(const ModelSpec& spec, std::uint64_t seed,
                                        std::size_t n_samples = 10000,
                                        std::size_t particle_count = 64);

}  // namespace mfergodic

#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfergodic/measure.hpp"
#include "mfergodic/model.hpp"

namespace mfergodic {

/// Feedback rule (t, x, summary of the current measure) -> action.
///
/// Every evaluation is projected onto the action set, so a policy can never
/// produce an inadmissible action whatever its parameters.
class Policy {
 public:
  enum class Family { Constant, AffineClamped, PiecewiseConstantInTime, TabularGrid };

  Policy() = default;

  static Policy constant(const ActionSet& actions, std::vector<double> a);
  /// a = proj_A(k0 + K1 x + K2 m); K1, K2 are k x d row-major.
  static Policy affine_clamped(const ActionSet& actions, std::size_t dim, std::vector<double> k0,
                               std::vector<double> K1, std::vector<double> K2);
  /// breakpoints t_1 < ... < t_{n-1}; sub-policy j acts on [t_j, t_{j+1}).
  static Policy piecewise(std::vector<double> breakpoints, std::vector<Policy> pieces);
  /// d = 1 only. Nearest cell in (x, mean) with saturating edge bins;
  /// `table` holds one action (k values) per cell, x-major.
  static Policy tabular(const ActionSet& actions, std::vector<double> x_centers,
                        std::vector<double> m_centers, std::vector<double> table);

  Family family() const { return family_; }
  const ActionSet& actions() const { return actions_; }
  std::size_t action_dim() const { return actions_.dim(); }

  /// Writes action_dim() values to `out`.
  void evaluate(double t, const double* x, const MeasureSummary& m, double* out) const;
  std::vector<double> evaluate(double t, std::span<const double> x, const MeasureSummary& m) const;

  /// True when the action at time t does not depend on the state or the measure.
  bool state_independent_at(double t) const;
  bool state_independent() const;

  /// Flattened parameters (constant: a; affine: k0, K1, K2; tabular: table;
  /// piecewise: concatenation of the pieces).
  std::vector<double> params() const;

  const std::vector<double>& breakpoints() const { return breakpoints_; }
  const std::vector<Policy>& pieces() const { return pieces_; }
  const std::vector<double>& x_centers() const { return x_centers_; }
  const std::vector<double>& m_centers() const { return m_centers_; }
  const std::vector<double>& table() const { return table_; }

  nlohmann::json to_json() const;
  /// The action set comes from the model the policy is replayed against.
  static Policy from_json(const nlohmann::json& j, const ActionSet& actions);

  std::string describe() const;

 private:
  const Policy& piece_at(double t) const;

  Family family_ = Family::Constant;
  ActionSet actions_;
  std::size_t dim_ = 1;
  std::vector<double> a_;                  // constant
  std::vector<double> k0_, K1_, K2_;       // affine
  std::vector<double> breakpoints_;        // piecewise
  std::vector<Policy> pieces_;
  std::vector<double> x_centers_, m_centers_, table_;  // tabular
};

/// A parametric family of policies and the parameter domain searched by the
/// optimizer.
struct PolicyFamily {
  enum class Kind { Constant, AffineClamped, PiecewiseConstantInTime };

  Kind kind = Kind::Constant;
  ActionSet actions;
  std::size_t dim = 1;
  /// PiecewiseConstantInTime: number of equal windows over [0, horizon].
  int windows = 8;
  double horizon = 1.0;
  /// AffineClamped: search box half-width for the gains.
  double gain_range = 5.0;

  static PolicyFamily constant(const ActionSet& a) { return {Kind::Constant, a}; }
  static PolicyFamily affine(const ActionSet& a, std::size_t d) {
    PolicyFamily f{Kind::AffineClamped, a};
    f.dim = d;
    return f;
  }
  static PolicyFamily windowed(const ActionSet& a, double horizon, int windows = 8) {
    PolicyFamily f{Kind::PiecewiseConstantInTime, a};
    f.horizon = horizon;
    f.windows = windows;
    return f;
  }

  std::size_t param_dim() const;
  Policy make(std::span<const double> params) const;

  /// Constant policies over a finite action set (or the grid of a box).
  bool enumerable() const;
  std::vector<Policy> constant_candidates() const;

  /// Lower/upper bounds of the parameter search box.
  std::vector<double> lower() const;
  std::vector<double> upper() const;

  nlohmann::json to_json() const;
  static PolicyFamily from_json(const nlohmann::json& j, const ActionSet& actions, std::size_t dim);
};

}  // namespace mfergodic

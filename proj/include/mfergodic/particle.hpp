#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfergodic/measure.hpp"
#include "mfergodic/model.hpp"
#include "mfergodic/policy.hpp"
#include "mfergodic/rng.hpp"

namespace mfergodic {

/// N particles in R^d (row-major) at a time stamp.
struct Ensemble {
  std::vector<double> positions;
  std::size_t dim = 1;
  double time = 0.0;

  std::size_t size() const { return dim == 0 ? 0 : positions.size() / dim; }
  EmpiricalMeasure measure() const { return {positions, dim}; }
  MeasureSummary summary() const { return measure().summary(); }
};

/// Named initial laws. Gaussian takes per-coordinate variances; uniform takes
/// per-coordinate [lower, upper].
struct InitialLaw {
  enum class Kind { PointMass, Gaussian, Uniform, Explicit };

  Kind kind = Kind::PointMass;
  std::string name;
  std::vector<double> a;  // point / mean / lower
  std::vector<double> b;  // - / variance / upper
  std::vector<double> points;  // explicit, row-major

  static InitialLaw point_mass(std::vector<double> x, std::string name = "");
  static InitialLaw gaussian(std::vector<double> mean, std::vector<double> var, std::string name = "");
  static InitialLaw uniform(std::vector<double> lower, std::vector<double> upper, std::string name = "");
  static InitialLaw explicit_points(std::vector<double> pts, std::size_t dim, std::string name = "");

  std::size_t dim() const;
  /// Exact mean and second moment of the law.
  MeasureSummary summary() const;
  std::string label() const;

  nlohmann::json to_json() const;
  static InitialLaw from_json(const nlohmann::json& j, std::size_t dim);
};

/// N i.i.d. draws (point masses and explicit lists are reproduced exactly;
/// an explicit list of n points fills N particles cyclically).
Ensemble sample_initial(const InitialLaw& law, std::size_t N, RngStream& rng);

/// Deterministic "quantile" cloud: 1-d Gaussian laws use the midpoint
/// quantiles, other laws fall back to sampling with a fixed stream.
Ensemble quantile_cloud(const InitialLaw& law, std::size_t N);

constexpr double kBlowUpThreshold = 1e8;

/// One explicit Euler-Maruyama step driven by the given standard normals
/// (N*d values, particle-major). The measure is frozen at the step start.
/// Returns the particle-average reward at the pre-step state and actions.
double euler_step(const ModelSpec& spec, Ensemble& ens, const Policy& policy, double dt,
                  std::span<const double> noise, bool with_reward = true);

/// Average reward at the current state (policy evaluated at ens.time).
double mean_reward(const ModelSpec& spec, const Ensemble& ens, const Policy& policy);

/// step_euler drawing its normals from `rng`.
Ensemble step_euler(const ModelSpec& spec, const Ensemble& ens, const Policy& policy, double dt,
                    RngStream& rng);

void fill_normals(RngStream& rng, std::span<double> out);

/// Number of steps for horizon T; throws ConfigError unless dt divides T.
std::size_t step_count(double T, double dt);

struct Observation {
  double time;
  const Ensemble& ensemble;
  const MeasureSummary& summary;
  double running_reward;  // trapezoid integral of the mean reward up to `time`
};
using Observer = std::function<void(const Observation&)>;

struct Trajectory {
  double dt = 0.0;
  std::vector<double> mean_reward;  // at each grid point, steps + 1 values
  double reward_integral = 0.0;
  Ensemble final;
};

struct SimulateOptions {
  double T = 1.0;
  double dt = 1e-2;
  std::size_t stride = 1;  // observer cadence in steps
  bool with_reward = true;
};

Trajectory simulate(const ModelSpec& spec, const Ensemble& ens0, const Policy& policy,
                    const SimulateOptions& opt, RngStream& rng,
                    const std::vector<Observer>& observers = {});

struct W2Result {
  double value = 0.0;
  bool approximate = false;  // sliced estimate for d > 1
};

/// Exact for d = 1 by sorted pairing; d > 1 averages 64 random projections.
W2Result w2_distance(const EmpiricalMeasure& a, const EmpiricalMeasure& b, std::uint64_t seed = 0);

/// Records the CSV columns (time, mean, second_moment, w2_to_ref, running_reward).
class TrajectoryRecorder {
 public:
  explicit TrajectoryRecorder(std::optional<Ensemble> reference = std::nullopt)
      : reference_(std::move(reference)) {}
  Observer observer();
  std::string csv() const;

  struct Row {
    double time, mean, second_moment, w2_to_ref, running_reward;
  };
  const std::vector<Row>& rows() const { return rows_; }

 private:
  std::optional<Ensemble> reference_;
  std::vector<Row> rows_;
};

struct GapCurve {
  std::vector<double> times;
  std::vector<double> mean_sq_gap;
  std::vector<double> envelope;  // gap(0) e^{-2 eta t}
  double eta = 0.0;

  std::string csv() const;
  /// Largest ratio gap(t) / envelope(t) (envelope > 0).
  double worst_ratio() const;
  /// Least-squares slope of -log gap over times in [t0, t1].
  double fitted_rate(double t0, double t1) const;
};

/// Synchronous coupling: both systems use the same normals per particle index
/// and the same policy, each reading its own state and measure.
GapCurve synchronous_coupling_gap(const ModelSpec& spec, const Policy& policy, const Ensemble& a0,
                                  const Ensemble& b0, double T, double dt, RngStream& rng,
                                  std::size_t stride = 1);

struct MomentCurve {
  std::vector<double> times;
  std::vector<double> second_moment;
  std::vector<double> envelope;  // E|X_0|^2 e^{-eta t} + K, times slack
  double K = 0.0;
  double slack = 1.0;
  bool within_envelope = true;

  std::string csv() const;
};

MomentCurve second_moment_curve(const ModelSpec& spec, const Policy& policy, const Ensemble& ens0,
                                double T, double dt, RngStream& rng, double slack = 1.25,
                                std::size_t stride = 1);

}  // namespace mfergodic

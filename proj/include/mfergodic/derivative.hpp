#pragma once

#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mfergodic/model.hpp"
#include "mfergodic/particle.hpp"
#include "mfergodic/policy.hpp"

namespace mfergodic {

/// A function u on measures, evaluated on empirical measures.
///
/// `increment` returns u(ens with x_i += shift) - u(ens). The default
/// recomputes u; subclasses with moment structure return the exact
/// increment so finite differences do not lose digits to cancellation.
class MeasureFunctional {
 public:
  virtual ~MeasureFunctional() = default;
  virtual double value(const Ensemble& ens) const = 0;
  virtual double increment(const Ensemble& ens, const MeasureSummary& base, std::size_t i,
                           std::span<const double> shift) const;
  /// (u(x_i + h e_c) - u(x_i - h e_c), u(x_i + h e_c) + u(x_i - h e_c) - 2 u).
  virtual std::pair<double, double> central_differences(const Ensemble& ens, const MeasureSummary& base,
                                                        std::size_t i, std::size_t c, double h) const;
};

/// u = c_mean * m + c_second * E|X|^2 + c_mean_sq * |m|^2 (m the mean vector).
class QuadraticMomentFunctional : public MeasureFunctional {
 public:
  QuadraticMomentFunctional(double c_mean, double c_second, double c_mean_sq)
      : c_mean_(c_mean), c_second_(c_second), c_mean_sq_(c_mean_sq) {}
  double value(const Ensemble& ens) const override;
  double increment(const Ensemble& ens, const MeasureSummary& base, std::size_t i,
                   std::span<const double> shift) const override;
  std::pair<double, double> central_differences(const Ensemble& ens, const MeasureSummary& base, std::size_t i,
                                                std::size_t c, double h) const override;

 private:
  double c_mean_, c_second_, c_mean_sq_;
};

/// u(mu) = g(summary(mu)); increments update the summary in O(1).
class SummaryFunctional : public MeasureFunctional {
 public:
  explicit SummaryFunctional(std::function<double(const MeasureSummary&)> g) : g_(std::move(g)) {}
  double value(const Ensemble& ens) const override { return g_(ens.summary()); }
  double increment(const Ensemble& ens, const MeasureSummary& base, std::size_t i,
                   std::span<const double> shift) const override;

 private:
  std::function<double(const MeasureSummary&)> g_;
};

/// u given as an arbitrary callable on ensembles.
class CallableFunctional : public MeasureFunctional {
 public:
  explicit CallableFunctional(std::function<double(const Ensemble&)> u) : u_(std::move(u)) {}
  double value(const Ensemble& ens) const override { return u_(ens); }

 private:
  std::function<double(const Ensemble&)> u_;
};

/// Per-particle estimates of d_mu u(mu)(x_i) (N x d) and d_x d_mu u(mu)(x_i)
/// (N x d x d).
struct DerivativeField {
  std::vector<double> dmu;
  std::vector<double> dxdmu;
  std::size_t n = 0, dim = 1;
  double fd_step = 0.0;

  double first(std::size_t i, std::size_t c = 0) const { return dmu[i * dim + c]; }
  double second(std::size_t i, std::size_t c = 0, std::size_t c2 = 0) const {
    return dxdmu[(i * dim + c) * dim + c2];
  }
};

/// Central differences of the empirical lift, scaled by N:
///   dmu[i]   = N (u(x_i + h) - u(x_i - h)) / (2h)
///   dxdmu[i] = N (u(x_i + h) - 2 u + u(x_i - h)) / h^2
/// Off-diagonal entries (d > 1) use the four-point mixed difference. The
/// second field is the diagonal block of the lift's Hessian scaled by N, so
/// functionals with cross-particle second structure, such as m(mu)^2, get a
/// 2/N term rather than 0.
DerivativeField lions_derivative(const MeasureFunctional& u, const Ensemble& ens, double fd_step);

/// (1/N) sum_i max_a [ f(x_i, mu, a) + <b(x_i, mu, a), dmu_i> + 1/2 tr(sigma sigma^T dxdmu_i) ]
/// over the action grid (box sets at `action_resolution` points per axis).
double hamiltonian_F(const ModelSpec& spec, const Ensemble& ens, const DerivativeField& field,
                     int action_resolution = 33);

/// Source of derivative fields of a candidate bias function phi.
class DerivativeSource {
 public:
  virtual ~DerivativeSource() = default;
  virtual std::string name() const = 0;
  /// Field at the particles of `ens`.
  virtual DerivativeField field(const Ensemble& ens) const = 0;
  /// d = 1: d_mu phi(mu)(x) and d_x d_mu phi(mu)(x) at arbitrary points x,
  /// with mu represented by `ens`.
  virtual void at_points(const Ensemble& ens, std::span<const double> xs, std::vector<double>& dmu,
                         std::vector<double>& dxdmu) const = 0;
  /// phi(mu) when the source knows it.
  virtual std::optional<double> value(const Ensemble&) const { return std::nullopt; }
};

/// Exact bias function of a one-dimensional model with linear mean-reverting
/// drift b0 + B x (B < 0), constant noise s0 and a fixed action a*, for which
/// phi(mu) = int psi dmu - psi(0) with psi the solution of the stationary
/// Poisson equation (s0^2/2) psi'' + b psi' = lambda - f. Computed by adaptive
/// quadrature against the Gaussian stationary law.
class PoissonOracle : public DerivativeSource {
 public:
  PoissonOracle(const ModelSpec& spec, std::vector<double> action);

  std::string name() const override { return "poisson_oracle"; }
  double lambda() const { return lambda_; }
  double stationary_mean() const { return mean_; }
  double stationary_var() const { return var_; }

  double psi_prime(double x) const;
  double psi_second(double x) const;
  double psi(double x) const;

  DerivativeField field(const Ensemble& ens) const override;
  void at_points(const Ensemble& ens, std::span<const double> xs, std::vector<double>& dmu,
                 std::vector<double>& dxdmu) const override;
  std::optional<double> value(const Ensemble& ens) const override;

 private:
  double f(double x) const;

  void tabulate() const;

  std::vector<RewardTerm> terms_;
  double action_reward_ = 0.0;
  double b0_ = 0.0, B_ = 0.0, s_ = 0.0;
  double mean_ = 0.0, var_ = 0.0, lambda_ = 0.0;
  // psi on a fine grid, built on first use by value().
  mutable std::once_flag table_once_;
  mutable std::vector<double> psi_table_;
  mutable double table_lo_ = 0.0, table_step_ = 0.0;
};

/// Finite-difference Lions derivative of a function of (mean, sd), e.g. the
/// interpolated phi table. `field` differentiates the particle lift; at
/// arbitrary points the chain rule d_mu u(x) = u_m + u_sd (x - m) / sd is used.
class SummaryDerivativeSource : public DerivativeSource {
 public:
  SummaryDerivativeSource(std::string name, std::function<double(double mean, double sd)> u, double fd_step = 1e-3)
      : name_(std::move(name)), u_(std::move(u)), h_(fd_step) {}

  std::string name() const override { return name_; }
  DerivativeField field(const Ensemble& ens) const override;
  void at_points(const Ensemble& ens, std::span<const double> xs, std::vector<double>& dmu,
                 std::vector<double>& dxdmu) const override;
  std::optional<double> value(const Ensemble& ens) const override;

 private:
  std::string name_;
  std::function<double(double, double)> u_;
  double h_;
};

struct HjbProbeResidual {
  std::string probe;
  double F = 0.0;
  double residual = 0.0;  // lambda_hat - F
};

struct HjbResidualReport {
  double lambda_hat = 0.0;
  double lambda_stderr = 0.0;
  std::string source;
  std::vector<HjbProbeResidual> probes;
  double max_abs_residual = 0.0;

  nlohmann::json to_json() const;
  std::string csv() const;
};

HjbResidualReport hjb_residual(const ModelSpec& spec, double lambda_hat, const DerivativeSource& source,
                               const std::vector<std::pair<std::string, Ensemble>>& probes,
                               int action_resolution = 33);

struct GreedyConfig {
  std::vector<double> x_centers;  // default: 81 points on [-4, 4]
  std::vector<double> m_centers;  // default: 17 points on [-2, 2]
  double reference_sd = 1.0;      // sd of the Gaussian clouds standing for mu at each mean
  std::size_t cloud_size = 512;
  int action_resolution = 33;
};

/// argmax over the action grid of the Hamiltonian integrand at each
/// (x, m) cell, with mu represented by a Gaussian quantile cloud of mean m.
/// d = 1 only. Ties (within 1e-12 relative) go to the smallest action.
Policy greedy_feedback(const ModelSpec& spec, const DerivativeSource& source, const GreedyConfig& cfg = {});

}  // namespace mfergodic

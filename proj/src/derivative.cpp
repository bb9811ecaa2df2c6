#include "mfergodic/derivative.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <boost/math/constants/constants.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "mfergodic/errors.hpp"

namespace mfergodic {

using nlohmann::json;

// -- Functionals ---------------------------------------------------------------

double MeasureFunctional::increment(const Ensemble& ens, const MeasureSummary&, std::size_t i,
                                    std::span<const double> shift) const {
  Ensemble moved = ens;
  for (std::size_t c = 0; c < ens.dim; ++c) moved.positions[i * ens.dim + c] += shift[c];
  return value(moved) - value(ens);
}

double QuadraticMomentFunctional::value(const Ensemble& ens) const {
  const auto s = ens.summary();
  double m = 0.0, m2 = 0.0;
  for (double v : s.mean) {
    m += v;
    m2 += v * v;
  }
  return c_mean_ * m + c_second_ * s.second_moment + c_mean_sq_ * m2;
}

double QuadraticMomentFunctional::increment(const Ensemble& ens, const MeasureSummary& base, std::size_t i,
                                            std::span<const double> shift) const {
  // Exact change of each moment when one particle moves; no cancellation
  // between two full evaluations.
  const double n = static_cast<double>(ens.size());
  double dm = 0.0, dsecond = 0.0, dmsq = 0.0;
  for (std::size_t c = 0; c < ens.dim; ++c) {
    const double h = shift[c];
    const double x = ens.positions[i * ens.dim + c];
    dm += h / n;
    dsecond += (2.0 * x * h + h * h) / n;
    dmsq += 2.0 * base.mean[c] * h / n + (h / n) * (h / n);
  }
  return c_mean_ * dm + c_second_ * dsecond + c_mean_sq_ * dmsq;
}

std::pair<double, double> MeasureFunctional::central_differences(const Ensemble& ens, const MeasureSummary& base,
                                                                std::size_t i, std::size_t c, double h) const {
  std::vector<double> shift(ens.dim, 0.0);
  shift[c] = h;
  const double up = increment(ens, base, i, shift);
  shift[c] = -h;
  const double down = increment(ens, base, i, shift);
  return {up - down, up + down};
}

std::pair<double, double> QuadraticMomentFunctional::central_differences(const Ensemble& ens,
                                                                         const MeasureSummary& base, std::size_t i,
                                                                         std::size_t c, double h) const {
  // The odd and even parts in h separately, so the x-dependent terms never cancel.
  const double n = static_cast<double>(ens.size());
  const double x = ens.positions[i * ens.dim + c];
  const double odd = c_mean_ * 2.0 * h / n + c_second_ * 4.0 * x * h / n + c_mean_sq_ * 4.0 * base.mean[c] * h / n;
  const double even = c_second_ * 2.0 * h * h / n + c_mean_sq_ * 2.0 * (h / n) * (h / n);
  return {odd, even};
}

double SummaryFunctional::increment(const Ensemble& ens, const MeasureSummary& base, std::size_t i,
                                    std::span<const double> shift) const {
  const double n = static_cast<double>(ens.size());
  MeasureSummary s = base;
  for (std::size_t c = 0; c < ens.dim; ++c) {
    const double x = ens.positions[i * ens.dim + c];
    s.mean[c] += shift[c] / n;
    s.second_moment += (2.0 * x * shift[c] + shift[c] * shift[c]) / n;
  }
  return g_(s) - g_(base);
}

DerivativeField lions_derivative(const MeasureFunctional& u, const Ensemble& ens, double h) {
  if (!(h > 0.0)) throw ConfigError("fd_step: must be > 0");
  const std::size_t n = ens.size(), d = ens.dim;
  DerivativeField f;
  f.n = n;
  f.dim = d;
  f.fd_step = h;
  f.dmu.assign(n * d, 0.0);
  f.dxdmu.assign(n * d * d, 0.0);
  const auto base = ens.summary();
  const double N = static_cast<double>(n);
  std::vector<double> shift(d, 0.0);
  auto inc = [&](std::size_t i) {
    const double v = u.increment(ens, base, i, shift);
    if (!std::isfinite(v)) throw NumericalError("lions_derivative: non-finite functional value at particle " + std::to_string(i));
    return v;
  };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      const auto [odd, even] = u.central_differences(ens, base, i, c, h);
      if (!std::isfinite(odd) || !std::isfinite(even))
        throw NumericalError("lions_derivative: non-finite functional value at particle " + std::to_string(i));
      f.dmu[i * d + c] = N * odd / (2.0 * h);
      f.dxdmu[(i * d + c) * d + c] = N * even / (h * h);
      for (std::size_t c2 = c + 1; c2 < d; ++c2) {
        double mixed = 0.0;
        for (int sa : {1, -1})
          for (int sb : {1, -1}) {
            std::fill(shift.begin(), shift.end(), 0.0);
            shift[c] = sa * h;
            shift[c2] = sb * h;
            mixed += sa * sb * inc(i);
          }
        const double v = N * mixed / (4.0 * h * h);
        f.dxdmu[(i * d + c) * d + c2] = v;
        f.dxdmu[(i * d + c2) * d + c] = v;
      }
    }
  }
  return f;
}

// -- Hamiltonian -----------------------------------------------------------------

namespace {

std::vector<std::vector<double>> sorted_grid(const ModelSpec& spec, int resolution) {
  auto grid = spec.actions.with_resolution(resolution).grid();
  if (grid.empty()) throw ConfigError("action_set: empty action grid");
  std::sort(grid.begin(), grid.end());
  return grid;
}

double integrand(const FrozenModel& fm, std::size_t d, const double* x, const double* a, const double* dmu,
                 const double* dxdmu, double* b, double* s) {
  fm.drift(x, a, b);
  fm.diffusion(x, a, s);
  double h = fm.reward(x, a);
  for (std::size_t c = 0; c < d; ++c) h += b[c] * dmu[c] + 0.5 * s[c] * s[c] * dxdmu[c * d + c];
  return h;
}

}  // namespace

double hamiltonian_F(const ModelSpec& spec, const Ensemble& ens, const DerivativeField& field, int action_resolution) {
  const std::size_t n = ens.size(), d = ens.dim;
  if (field.n != n || field.dim != d) throw ConfigError("hamiltonian_F: field does not match the ensemble");
  const auto grid = sorted_grid(spec, action_resolution);
  const auto mu = ens.summary();
  const FrozenModel fm(spec, mu);
  std::vector<double> b(d), s(d);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& a : grid)
      best = std::max(best, integrand(fm, d, ens.positions.data() + i * d, a.data(), field.dmu.data() + i * d,
                                      field.dxdmu.data() + i * d * d, b.data(), s.data()));
    total += best;
  }
  return total / static_cast<double>(n);
}

// -- Poisson oracle ----------------------------------------------------------------

namespace {

template <class F>
double integrate(F&& fn, double a, double b) {
  return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(fn, a, b, 15, 1e-13);
}

}  // namespace

PoissonOracle::PoissonOracle(const ModelSpec& spec, std::vector<double> action) {
  if (!spec.affine || spec.dim != 1)
    throw ConfigError("poisson oracle: needs a one-dimensional affine model");
  const auto& c = *spec.affine;
  if (c.Bbar[0] != 0.0 || c.S[0] != 0.0 || c.Sbar[0] != 0.0)
    throw ConfigError("poisson oracle: needs a model without mean-field terms and with constant noise");
  if (!(c.B[0] < 0.0)) throw ConfigError("poisson oracle: needs B < 0");
  if (!(c.s0[0] != 0.0)) throw ConfigError("poisson oracle: needs nonzero noise");
  if (action.size() != spec.actions.dim()) throw ConfigError("poisson oracle: action dimension mismatch");
  for (const auto& t : spec.reward_terms)
    if (t.on_mean) throw ConfigError("poisson oracle: reward terms on the mean are not supported");
  terms_ = spec.reward_terms;
  action_reward_ = spec.action_reward.is_zero() ? 0.0 : spec.action_reward.value(action);
  b0_ = c.b0[0];
  for (std::size_t l = 0; l < action.size(); ++l) b0_ += c.G[l] * action[l];
  B_ = c.B[0];
  s_ = std::abs(c.s0[0]);
  mean_ = -b0_ / B_;
  var_ = s_ * s_ / (-2.0 * B_);
  const double sd = std::sqrt(var_);
  const double inv_sqrt_2pi = boost::math::constants::one_div_root_two_pi<double>();
  lambda_ = integrate([&](double z) { return f(mean_ + sd * z) * inv_sqrt_2pi * std::exp(-0.5 * z * z); }, -12.0, 12.0);
}

double PoissonOracle::f(double x) const {
  double v = action_reward_;
  for (const auto& t : terms_) v += t.value(x);
  return v;
}

double PoissonOracle::psi_prime(double x) const {
  // psi'(x) = (2/s^2) (1/p(x)) int_{-inf}^x p (lambda - f) dy; for x above the
  // mean the complementary tail is used (the full integral vanishes). The
  // ratio p(y)/p(x) is folded into the integrand so nothing underflows.
  const double k = 2.0 / (s_ * s_);
  const double u_max = std::sqrt(80.0 * var_);
  const double dx = x - mean_;
  if (dx >= 0.0) {
    return -k * integrate([&](double u) { return std::exp(-(dx * u + 0.5 * u * u) / var_) * (lambda_ - f(x + u)); },
                          0.0, u_max);
  }
  return k * integrate([&](double u) { return std::exp(-(-dx * u + 0.5 * u * u) / var_) * (lambda_ - f(x - u)); },
                       0.0, u_max);
}

double PoissonOracle::psi_second(double x) const {
  // Differentiated numerically rather than read off the Poisson equation, so
  // the HJB residual of the oracle actually tests that psi' solves it.
  const double h = 1e-3 * std::sqrt(var_);
  return (psi_prime(x + h) - psi_prime(x - h)) / (2.0 * h);
}

void PoissonOracle::tabulate() const {
  const double sd = std::sqrt(var_);
  constexpr int kNodes = 4801;
  table_lo_ = std::min(0.0, mean_) - 12.0 * sd;
  const double hi = std::max(0.0, mean_) + 12.0 * sd;
  table_step_ = (hi - table_lo_) / (kNodes - 1);
  std::vector<double> d(kNodes);
  for (int i = 0; i < kNodes; ++i) d[i] = psi_prime(table_lo_ + i * table_step_);
  psi_table_.assign(kNodes, 0.0);
  for (int i = 1; i < kNodes; ++i) {
    // Simpson on each panel with a midpoint evaluation.
    const double a = table_lo_ + (i - 1) * table_step_;
    psi_table_[i] = psi_table_[i - 1] + table_step_ / 6.0 * (d[i - 1] + 4.0 * psi_prime(a + 0.5 * table_step_) + d[i]);
  }
}

double PoissonOracle::psi(double x) const {
  std::call_once(table_once_, [this] { tabulate(); });
  auto at = [&](double y) {
    const double r = (y - table_lo_) / table_step_;
    const double rc = std::clamp(r, 0.0, static_cast<double>(psi_table_.size() - 1));
    const auto i = std::min(static_cast<std::size_t>(rc), psi_table_.size() - 2);
    const double w = rc - static_cast<double>(i);
    return (1.0 - w) * psi_table_[i] + w * psi_table_[i + 1];
  };
  return at(x) - at(0.0);
}

DerivativeField PoissonOracle::field(const Ensemble& ens) const {
  if (ens.dim != 1) throw ConfigError("poisson oracle: one-dimensional ensembles only");
  DerivativeField f;
  f.n = ens.size();
  f.dim = 1;
  f.dmu.resize(f.n);
  f.dxdmu.resize(f.n);
  for (std::size_t i = 0; i < f.n; ++i) {
    const double x = ens.positions[i];
    f.dmu[i] = psi_prime(x);
    f.dxdmu[i] = psi_second(x);
  }
  return f;
}

void PoissonOracle::at_points(const Ensemble&, std::span<const double> xs, std::vector<double>& dmu,
                              std::vector<double>& dxdmu) const {
  dmu.resize(xs.size());
  dxdmu.resize(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    dmu[i] = psi_prime(xs[i]);
    dxdmu[i] = psi_second(xs[i]);
  }
}

std::optional<double> PoissonOracle::value(const Ensemble& ens) const {
  double s = 0.0;
  for (double x : ens.positions) s += psi(x);
  return s / static_cast<double>(ens.size());
}

// -- Summary-based source ---------------------------------------------------------

DerivativeField SummaryDerivativeSource::field(const Ensemble& ens) const {
  const SummaryFunctional u([this](const MeasureSummary& s) { return u_(s.mean[0], s.sd()); });
  return lions_derivative(u, ens, h_);
}

void SummaryDerivativeSource::at_points(const Ensemble& ens, std::span<const double> xs, std::vector<double>& dmu,
                                        std::vector<double>& dxdmu) const {
  const auto s = ens.summary();
  const double m = s.mean[0];
  const double sd = std::max(s.sd(), 1e-6);
  const double u_m = (u_(m + h_, sd) - u_(m - h_, sd)) / (2.0 * h_);
  const double lo = std::max(0.0, sd - h_);
  const double u_sd = (u_(m, sd + h_) - u_(m, lo)) / (sd + h_ - lo);
  dmu.resize(xs.size());
  dxdmu.assign(xs.size(), u_sd / sd);
  for (std::size_t i = 0; i < xs.size(); ++i) dmu[i] = u_m + u_sd * (xs[i] - m) / sd;
}

std::optional<double> SummaryDerivativeSource::value(const Ensemble& ens) const {
  const auto s = ens.summary();
  return u_(s.mean[0], s.sd());
}

// -- HJB residual -----------------------------------------------------------------

json HjbResidualReport::to_json() const {
  json probes_json = json::array();
  for (const auto& p : probes) probes_json.push_back({{"probe", p.probe}, {"F", p.F}, {"residual", p.residual}});
  return json{{"lambda_hat", lambda_hat}, {"source", source}, {"probes", probes_json},
              {"max_abs_residual", max_abs_residual}};
}

std::string HjbResidualReport::csv() const {
  std::ostringstream os;
  os.precision(12);
  os << "probe,residual,stderr\n";
  for (const auto& p : probes) os << p.probe << ',' << p.residual << ',' << lambda_stderr << '\n';
  return os.str();
}

HjbResidualReport hjb_residual(const ModelSpec& spec, double lambda_hat, const DerivativeSource& source,
                               const std::vector<std::pair<std::string, Ensemble>>& probes, int action_resolution) {
  HjbResidualReport r;
  r.lambda_hat = lambda_hat;
  r.source = source.name();
  for (const auto& [name, ens] : probes) {
    const auto field = source.field(ens);
    HjbProbeResidual p{name, hamiltonian_F(spec, ens, field, action_resolution), 0.0};
    p.residual = lambda_hat - p.F;
    if (!std::isfinite(p.residual)) throw NumericalError("hjb_residual: non-finite residual at probe " + name);
    r.max_abs_residual = std::max(r.max_abs_residual, std::abs(p.residual));
    r.probes.push_back(p);
  }
  return r;
}

// -- Greedy feedback ----------------------------------------------------------------

namespace {

std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> v(n);
  for (int i = 0; i < n; ++i) v[i] = n == 1 ? a : a + (b - a) * i / (n - 1);
  return v;
}

}  // namespace

Policy greedy_feedback(const ModelSpec& spec, const DerivativeSource& source, const GreedyConfig& cfg) {
  if (spec.dim != 1) throw ConfigError("greedy_feedback: one-dimensional models only");
  const auto xs = cfg.x_centers.empty() ? linspace(-4.0, 4.0, 81) : cfg.x_centers;
  const auto ms = cfg.m_centers.empty() ? linspace(-2.0, 2.0, 17) : cfg.m_centers;
  const auto grid = sorted_grid(spec, cfg.action_resolution);
  const std::size_t k = spec.actions.dim();
  std::vector<double> table(xs.size() * ms.size() * k);
  std::vector<double> dmu, dxdmu;
  double b = 0.0, s = 0.0;
  for (std::size_t im = 0; im < ms.size(); ++im) {
    const auto cloud =
        quantile_cloud(InitialLaw::gaussian({ms[im]}, {cfg.reference_sd * cfg.reference_sd}), cfg.cloud_size);
    const auto mu = cloud.summary();
    const FrozenModel fm(spec, mu);
    source.at_points(cloud, xs, dmu, dxdmu);
    for (std::size_t ix = 0; ix < xs.size(); ++ix) {
      std::size_t best = 0;
      double best_h = -std::numeric_limits<double>::infinity();
      for (std::size_t g = 0; g < grid.size(); ++g) {
        const double h = integrand(fm, 1, &xs[ix], grid[g].data(), &dmu[ix], &dxdmu[ix], &b, &s);
        // Strictly better beyond rounding; otherwise the earlier (smaller) action stays.
        if (h > best_h + 1e-12 * (1.0 + std::abs(best_h)) || g == 0) {
          best_h = h;
          best = g;
        }
      }
      std::copy(grid[best].begin(), grid[best].end(), table.begin() + (ix * ms.size() + im) * k);
    }
  }
  return Policy::tabular(spec.actions, xs, ms, table);
}

}  // namespace mfergodic

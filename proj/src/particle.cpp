#include "mfergodic/particle.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <boost/math/distributions/normal.hpp>

#include "json_util.hpp"
#include "mfergodic/errors.hpp"

namespace mfergodic {

using nlohmann::json;
using namespace detail;

// -- Initial laws ----------------------------------------------------------------

InitialLaw InitialLaw::point_mass(std::vector<double> x, std::string name) {
  InitialLaw l;
  l.kind = Kind::PointMass;
  l.a = std::move(x);
  l.name = std::move(name);
  return l;
}

InitialLaw InitialLaw::gaussian(std::vector<double> mean, std::vector<double> var, std::string name) {
  if (mean.size() != var.size()) throw ConfigError("law: mean and variance dimensions differ");
  for (double v : var)
    if (!(v >= 0.0)) throw ConfigError("law.var: must be >= 0");
  InitialLaw l;
  l.kind = Kind::Gaussian;
  l.a = std::move(mean);
  l.b = std::move(var);
  l.name = std::move(name);
  return l;
}

InitialLaw InitialLaw::uniform(std::vector<double> lower, std::vector<double> upper, std::string name) {
  if (lower.size() != upper.size()) throw ConfigError("law: lower and upper dimensions differ");
  for (std::size_t i = 0; i < lower.size(); ++i)
    if (!(lower[i] <= upper[i])) throw ConfigError("law: lower > upper");
  InitialLaw l;
  l.kind = Kind::Uniform;
  l.a = std::move(lower);
  l.b = std::move(upper);
  l.name = std::move(name);
  return l;
}

InitialLaw InitialLaw::explicit_points(std::vector<double> pts, std::size_t dim, std::string name) {
  if (dim == 0 || pts.empty() || pts.size() % dim != 0)
    throw ConfigError("law.points: need a nonempty list of dim-sized points");
  InitialLaw l;
  l.kind = Kind::Explicit;
  l.points = std::move(pts);
  l.a.assign(dim, 0.0);  // carries the dimension
  l.name = std::move(name);
  return l;
}

std::size_t InitialLaw::dim() const { return a.size(); }

MeasureSummary InitialLaw::summary() const {
  MeasureSummary s;
  const std::size_t d = dim();
  s.mean.assign(d, 0.0);
  switch (kind) {
    case Kind::PointMass:
      s.mean = a;
      for (double v : a) s.second_moment += v * v;
      break;
    case Kind::Gaussian:
      s.mean = a;
      for (std::size_t i = 0; i < d; ++i) s.second_moment += a[i] * a[i] + b[i];
      break;
    case Kind::Uniform:
      for (std::size_t i = 0; i < d; ++i) {
        s.mean[i] = 0.5 * (a[i] + b[i]);
        s.second_moment += (a[i] * a[i] + a[i] * b[i] + b[i] * b[i]) / 3.0;
      }
      break;
    case Kind::Explicit:
      return EmpiricalMeasure(points, d).summary();
  }
  return s;
}

std::string InitialLaw::label() const {
  if (!name.empty()) return name;
  std::ostringstream os;
  auto list = [&](const std::vector<double>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  };
  switch (kind) {
    case Kind::PointMass: os << "delta("; list(a); os << ")"; break;
    case Kind::Gaussian: os << "N("; list(a); os << ";"; list(b); os << ")"; break;
    case Kind::Uniform: os << "U("; list(a); os << ";"; list(b); os << ")"; break;
    case Kind::Explicit: os << "points(" << points.size() / dim() << ")"; break;
  }
  return os.str();
}

json InitialLaw::to_json() const {
  json j;
  switch (kind) {
    case Kind::PointMass: j = {{"law", "point_mass"}, {"at", a}}; break;
    case Kind::Gaussian: j = {{"law", "gaussian"}, {"mean", a}, {"var", b}}; break;
    case Kind::Uniform: j = {{"law", "uniform"}, {"lower", a}, {"upper", b}}; break;
    case Kind::Explicit: j = {{"law", "explicit"}, {"points", points}}; break;
  }
  if (!name.empty()) j["name"] = name;
  return j;
}

InitialLaw InitialLaw::from_json(const json& j, std::size_t dim) {
  const std::string path = "law";
  require_object(j, path);
  if (!j.contains("law")) throw ConfigError(path + ".law: missing");
  const auto kind = j.at("law").get<std::string>();
  const std::string name = j.contains("name") ? j.at("name").get<std::string>() : "";
  auto vec = [&](const char* key, double fallback) {
    if (!j.contains(key)) return std::vector<double>(dim, fallback);
    auto v = get_vector(j.at(key), path + "." + key);
    if (v.size() == 1 && dim > 1) v.assign(dim, v[0]);
    if (v.size() != dim) throw ConfigError(path + "." + key + ": expected " + std::to_string(dim) + " entries");
    return v;
  };
  if (kind == "point_mass") {
    reject_unknown_keys(j, path, {"law", "name", "at"});
    return point_mass(vec("at", 0.0), name);
  }
  if (kind == "gaussian") {
    reject_unknown_keys(j, path, {"law", "name", "mean", "var"});
    return gaussian(vec("mean", 0.0), vec("var", 1.0), name);
  }
  if (kind == "uniform") {
    reject_unknown_keys(j, path, {"law", "name", "lower", "upper"});
    return uniform(vec("lower", 0.0), vec("upper", 1.0), name);
  }
  if (kind == "explicit") {
    reject_unknown_keys(j, path, {"law", "name", "points"});
    if (!j.contains("points")) throw ConfigError(path + ".points: missing");
    return explicit_points(get_vector(j.at("points"), path + ".points"), dim, name);
  }
  throw ConfigError(path + ".law: unknown law '" + kind + "'");
}

Ensemble sample_initial(const InitialLaw& law, std::size_t N, RngStream& rng) {
  if (N < 2) throw ConfigError("particles: N must be >= 2");
  const std::size_t d = law.dim();
  Ensemble e;
  e.dim = d;
  e.positions.resize(N * d);
  for (std::size_t i = 0; i < N; ++i) {
    double* x = e.positions.data() + i * d;
    switch (law.kind) {
      case InitialLaw::Kind::PointMass:
        std::copy(law.a.begin(), law.a.end(), x);
        break;
      case InitialLaw::Kind::Gaussian:
        for (std::size_t k = 0; k < d; ++k) x[k] = law.a[k] + std::sqrt(law.b[k]) * rng.normal();
        break;
      case InitialLaw::Kind::Uniform:
        for (std::size_t k = 0; k < d; ++k) x[k] = law.a[k] + (law.b[k] - law.a[k]) * rng.uniform();
        break;
      case InitialLaw::Kind::Explicit: {
        const std::size_t n = law.points.size() / d;
        std::copy_n(law.points.data() + (i % n) * d, d, x);
        break;
      }
    }
  }
  return e;
}

Ensemble quantile_cloud(const InitialLaw& law, std::size_t N) {
  const std::size_t d = law.dim();
  if (d == 1 && (law.kind == InitialLaw::Kind::Gaussian || law.kind == InitialLaw::Kind::Uniform)) {
    Ensemble e;
    e.dim = 1;
    e.positions.resize(N);
    const boost::math::normal_distribution<double> z;
    for (std::size_t i = 0; i < N; ++i) {
      const double u = (static_cast<double>(i) + 0.5) / static_cast<double>(N);
      e.positions[i] = law.kind == InitialLaw::Kind::Gaussian
                           ? law.a[0] + std::sqrt(law.b[0]) * boost::math::quantile(z, u)
                           : law.a[0] + (law.b[0] - law.a[0]) * u;
    }
    return e;
  }
  RngStream rng(0x9a55ULL, 0);
  return sample_initial(law, N, rng);
}

// -- Euler scheme ----------------------------------------------------------------

void fill_normals(RngStream& rng, std::span<double> out) {
  for (double& z : out) z = rng.normal();
}

std::size_t step_count(double T, double dt) {
  if (!(dt > 0.0)) throw ConfigError("dt: must be > 0");
  if (!(T > 0.0)) throw ConfigError("T: must be > 0");
  const double r = T / dt;
  const auto n = static_cast<std::size_t>(std::llround(r));
  if (n == 0 || std::abs(r - static_cast<double>(n)) > 1e-6 * std::max(1.0, r))
    throw ConfigError("dt: must divide T (T=" + std::to_string(T) + ", dt=" + std::to_string(dt) + ")");
  return n;
}

double euler_step(const ModelSpec& spec, Ensemble& ens, const Policy& policy, double dt,
                  std::span<const double> noise, bool with_reward) {
  const std::size_t d = ens.dim, n = ens.size(), k = policy.action_dim();
  if (noise.size() != n * d) throw ConfigError("noise: expected N*d normals");
  const MeasureSummary mu = ens.summary();
  const FrozenModel fm(spec, mu);
  const double t = ens.time, sqdt = std::sqrt(dt);
  const bool shared_action = policy.state_independent_at(t);
  double act[8], b[8], s[8];
  std::vector<double> big;
  double* a = act;
  double* bp = b;
  double* sp = s;
  if (k > 8 || d > 8) {
    big.resize(k + 2 * d);
    a = big.data();
    bp = a + k;
    sp = bp + d;
  }
  if (shared_action) policy.evaluate(t, ens.positions.data(), mu, a);
  double reward = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double* x = ens.positions.data() + i * d;
    if (!shared_action) policy.evaluate(t, x, mu, a);
    fm.drift(x, a, bp);
    fm.diffusion(x, a, sp);
    if (with_reward) reward += fm.reward(x, a);
    for (std::size_t c = 0; c < d; ++c) {
      const double v = x[c] + bp[c] * dt + sp[c] * sqdt * noise[i * d + c];
      if (!std::isfinite(v) || std::abs(v) > kBlowUpThreshold) throw BlowUpError(i, t + dt, v);
      x[c] = v;
    }
  }
  ens.time = t + dt;
  return reward / static_cast<double>(n);
}

double mean_reward(const ModelSpec& spec, const Ensemble& ens, const Policy& policy) {
  const std::size_t d = ens.dim, n = ens.size();
  const MeasureSummary mu = ens.summary();
  const FrozenModel fm(spec, mu);
  std::vector<double> a(policy.action_dim());
  double r = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = ens.positions.data() + i * d;
    policy.evaluate(ens.time, x, mu, a.data());
    r += fm.reward(x, a.data());
  }
  return r / static_cast<double>(n);
}

Ensemble step_euler(const ModelSpec& spec, const Ensemble& ens, const Policy& policy, double dt,
                    RngStream& rng) {
  if (!(dt > 0.0)) throw ConfigError("dt: must be > 0");
  Ensemble out = ens;
  std::vector<double> z(ens.positions.size());
  fill_normals(rng, z);
  euler_step(spec, out, policy, dt, z, false);
  return out;
}

Trajectory simulate(const ModelSpec& spec, const Ensemble& ens0, const Policy& policy,
                    const SimulateOptions& opt, RngStream& rng, const std::vector<Observer>& observers) {
  const std::size_t steps = step_count(opt.T, opt.dt);
  const std::size_t stride = std::max<std::size_t>(1, opt.stride);
  Trajectory tr;
  tr.dt = opt.dt;
  tr.final = ens0;
  if (opt.with_reward) tr.mean_reward.reserve(steps + 1);
  std::vector<double> z(ens0.positions.size());
  const double t0 = ens0.time;
  auto notify = [&](const MeasureSummary& s) {
    const Observation o{tr.final.time, tr.final, s, tr.reward_integral};
    for (const auto& obs : observers) obs(o);
  };
  if (!observers.empty()) notify(tr.final.summary());
  for (std::size_t k = 0; k < steps; ++k) {
    fill_normals(rng, z);
    const double r = euler_step(spec, tr.final, policy, opt.dt, z, opt.with_reward);
    // Pin the clock to the grid so long runs do not accumulate rounding.
    tr.final.time = t0 + static_cast<double>(k + 1) * opt.dt;
    if (opt.with_reward) {
      tr.mean_reward.push_back(r);
      if (k > 0) tr.reward_integral += 0.5 * opt.dt * (tr.mean_reward[k - 1] + r);
    }
    if (!observers.empty() && ((k + 1) % stride == 0 || k + 1 == steps)) {
      // The reward at the new grid point closes the last trapezoid panel.
      double running = tr.reward_integral;
      if (opt.with_reward) running += 0.5 * opt.dt * (r + mean_reward(spec, tr.final, policy));
      const auto s = tr.final.summary();
      const Observation o{tr.final.time, tr.final, s, running};
      for (const auto& obs : observers) obs(o);
    }
  }
  if (opt.with_reward) {
    const double last = mean_reward(spec, tr.final, policy);
    tr.reward_integral += 0.5 * opt.dt * (tr.mean_reward.back() + last);
    tr.mean_reward.push_back(last);
  }
  return tr;
}

// -- Wasserstein ---------------------------------------------------------------

namespace {

double sorted_msq(std::vector<double> u, std::vector<double> v) {
  std::sort(u.begin(), u.end());
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += (u[i] - v[i]) * (u[i] - v[i]);
  return s / static_cast<double>(u.size());
}

}  // namespace

W2Result w2_distance(const EmpiricalMeasure& a, const EmpiricalMeasure& b, std::uint64_t seed) {
  if (a.size() != b.size())
    throw ConfigError("w2_distance: particle counts differ (" + std::to_string(a.size()) + " vs " +
                      std::to_string(b.size()) + ")");
  if (a.dim() != b.dim()) throw ConfigError("w2_distance: dimensions differ");
  const std::size_t n = a.size(), d = a.dim();
  if (d == 1) {
    return {std::sqrt(sorted_msq({a.points().begin(), a.points().end()},
                                 {b.points().begin(), b.points().end()})),
            false};
  }
  constexpr int kProjections = 64;
  RngStream rng(seed, 0);
  std::vector<double> dir(d), u(n), v(n);
  double total = 0.0;
  for (int p = 0; p < kProjections; ++p) {
    double norm = 0.0;
    for (double& c : dir) {
      c = rng.normal();
      norm += c * c;
    }
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < n; ++i) {
      u[i] = v[i] = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        u[i] += a.points()[i * d + c] * dir[c] / norm;
        v[i] += b.points()[i * d + c] * dir[c] / norm;
      }
    }
    total += sorted_msq(u, v);
  }
  // Mean squared sliced distance times d matches W2^2 for translations.
  return {std::sqrt(total / kProjections * static_cast<double>(d)), true};
}

Observer TrajectoryRecorder::observer() {
  return [this](const Observation& o) {
    Row r{o.time, o.summary.mean.empty() ? 0.0 : o.summary.mean[0], o.summary.second_moment,
          std::numeric_limits<double>::quiet_NaN(), o.running_reward};
    if (reference_ && reference_->size() == o.ensemble.size())
      r.w2_to_ref = w2_distance(o.ensemble.measure(), reference_->measure()).value;
    rows_.push_back(r);
  };
}

std::string TrajectoryRecorder::csv() const {
  std::ostringstream os;
  os.precision(12);
  os << "time,mean,second_moment,w2_to_ref,running_reward\n";
  for (const auto& r : rows_) {
    os << r.time << ',' << r.mean << ',' << r.second_moment << ',';
    if (std::isfinite(r.w2_to_ref)) os << r.w2_to_ref;
    os << ',' << r.running_reward << '\n';
  }
  return os.str();
}

// -- Coupling and moments ---------------------------------------------------------

std::string GapCurve::csv() const {
  std::ostringstream os;
  os.precision(12);
  os << "t,gap,envelope\n";
  for (std::size_t i = 0; i < times.size(); ++i)
    os << times[i] << ',' << mean_sq_gap[i] << ',' << envelope[i] << '\n';
  return os.str();
}

double GapCurve::worst_ratio() const {
  double w = 0.0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (envelope[i] > 0.0) w = std::max(w, mean_sq_gap[i] / envelope[i]);
    else if (mean_sq_gap[i] > 0.0) return std::numeric_limits<double>::infinity();
  }
  return w;
}

double GapCurve::fitted_rate(double t0, double t1) const {
  double st = 0.0, sy = 0.0, stt = 0.0, sty = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] < t0 - 1e-12 || times[i] > t1 + 1e-12 || !(mean_sq_gap[i] > 0.0)) continue;
    const double y = -std::log(mean_sq_gap[i]);
    st += times[i];
    sy += y;
    stt += times[i] * times[i];
    sty += times[i] * y;
    ++n;
  }
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  return (n * sty - st * sy) / (n * stt - st * st);
}

namespace {

double mean_sq_difference(const Ensemble& a, const Ensemble& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.positions.size(); ++i) {
    const double h = a.positions[i] - b.positions[i];
    s += h * h;
  }
  return s / static_cast<double>(a.size());
}

}  // namespace

GapCurve synchronous_coupling_gap(const ModelSpec& spec, const Policy& policy, const Ensemble& a0,
                                  const Ensemble& b0, double T, double dt, RngStream& rng,
                                  std::size_t stride) {
  if (a0.size() != b0.size() || a0.dim != b0.dim)
    throw ConfigError("couple: ensembles must have the same size and dimension");
  const std::size_t steps = step_count(T, dt);
  stride = std::max<std::size_t>(1, stride);
  GapCurve g;
  g.eta = dissipativity_margin(spec).eta;
  Ensemble a = a0, b = b0;
  std::vector<double> z(a.positions.size());
  const double gap0 = mean_sq_difference(a, b);
  auto record = [&](double t) {
    g.times.push_back(t);
    g.mean_sq_gap.push_back(mean_sq_difference(a, b));
    g.envelope.push_back(gap0 * std::exp(-2.0 * g.eta * (t - a0.time)));
  };
  record(a0.time);
  for (std::size_t k = 0; k < steps; ++k) {
    fill_normals(rng, z);
    euler_step(spec, a, policy, dt, z, false);
    euler_step(spec, b, policy, dt, z, false);
    a.time = b.time = a0.time + static_cast<double>(k + 1) * dt;
    if ((k + 1) % stride == 0 || k + 1 == steps) record(a.time);
  }
  return g;
}

std::string MomentCurve::csv() const {
  std::ostringstream os;
  os.precision(12);
  os << "t,second_moment,envelope\n";
  for (std::size_t i = 0; i < times.size(); ++i)
    os << times[i] << ',' << second_moment[i] << ',' << envelope[i] << '\n';
  return os.str();
}

MomentCurve second_moment_curve(const ModelSpec& spec, const Policy& policy, const Ensemble& ens0,
                                double T, double dt, RngStream& rng, double slack, std::size_t stride) {
  const auto report = dissipativity_margin(spec);
  MomentCurve c;
  c.K = report.K;
  c.slack = slack;
  const double m0 = ens0.summary().second_moment;
  SimulateOptions opt{T, dt, stride, false};
  Observer obs = [&](const Observation& o) {
    const double t = o.time - ens0.time;
    const double env = m0 * std::exp(-report.eta * t) + slack * c.K;
    c.times.push_back(o.time);
    c.second_moment.push_back(o.summary.second_moment);
    c.envelope.push_back(env);
    if (!(o.summary.second_moment <= env)) c.within_envelope = false;
  };
  simulate(spec, ens0, policy, opt, rng, {obs});
  return c;
}

}  // namespace mfergodic

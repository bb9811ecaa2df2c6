#include "mfergodic/policy.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json_util.hpp"
#include "mfergodic/errors.hpp"

namespace mfergodic {

using nlohmann::json;
using namespace detail;

namespace {

std::size_t nearest_index(const std::vector<double>& centers, double v) {
  // Centers are sorted; cells are the Voronoi intervals, edge cells saturate.
  auto it = std::lower_bound(centers.begin(), centers.end(), v);
  if (it == centers.begin()) return 0;
  if (it == centers.end()) return centers.size() - 1;
  const auto hi = static_cast<std::size_t>(it - centers.begin());
  return (v - centers[hi - 1] <= centers[hi] - v) ? hi - 1 : hi;
}

void require_sorted(const std::vector<double>& v, const char* what) {
  if (v.empty()) throw ConfigError(std::string("policy.") + what + ": must be nonempty");
  for (std::size_t i = 1; i < v.size(); ++i)
    if (!(v[i] > v[i - 1])) throw ConfigError(std::string("policy.") + what + ": must be strictly increasing");
}

}  // namespace

Policy Policy::constant(const ActionSet& actions, std::vector<double> a) {
  if (a.size() != actions.dim()) throw ConfigError("policy.action: dimension mismatch with the action set");
  Policy p;
  p.family_ = Family::Constant;
  p.actions_ = actions;
  actions.project(a);
  p.a_ = std::move(a);
  return p;
}

Policy Policy::affine_clamped(const ActionSet& actions, std::size_t dim, std::vector<double> k0,
                              std::vector<double> K1, std::vector<double> K2) {
  const std::size_t k = actions.dim();
  if (k0.size() != k || K1.size() != k * dim || K2.size() != k * dim)
    throw ConfigError("policy: affine gains have the wrong shape");
  Policy p;
  p.family_ = Family::AffineClamped;
  p.actions_ = actions;
  p.dim_ = dim;
  p.k0_ = std::move(k0);
  p.K1_ = std::move(K1);
  p.K2_ = std::move(K2);
  return p;
}

Policy Policy::piecewise(std::vector<double> breakpoints, std::vector<Policy> pieces) {
  if (pieces.empty() || breakpoints.size() + 1 != pieces.size())
    throw ConfigError("policy.breakpoints: need exactly one fewer breakpoint than pieces");
  for (std::size_t i = 1; i < breakpoints.size(); ++i)
    if (!(breakpoints[i] > breakpoints[i - 1]))
      throw ConfigError("policy.breakpoints: must be strictly increasing");
  for (const auto& q : pieces)
    if (q.actions_.dim() != pieces.front().actions_.dim())
      throw ConfigError("policy.pieces: inconsistent action dimension");
  Policy p;
  p.family_ = Family::PiecewiseConstantInTime;
  p.actions_ = pieces.front().actions_;
  p.dim_ = pieces.front().dim_;
  p.breakpoints_ = std::move(breakpoints);
  p.pieces_ = std::move(pieces);
  return p;
}

Policy Policy::tabular(const ActionSet& actions, std::vector<double> x_centers,
                       std::vector<double> m_centers, std::vector<double> table) {
  require_sorted(x_centers, "x_centers");
  require_sorted(m_centers, "m_centers");
  const std::size_t k = actions.dim();
  if (table.size() != x_centers.size() * m_centers.size() * k)
    throw ConfigError("policy.table: expected one action per (x, m) cell");
  for (std::size_t c = 0; c < table.size(); c += k) actions.project({table.data() + c, k});
  Policy p;
  p.family_ = Family::TabularGrid;
  p.actions_ = actions;
  p.x_centers_ = std::move(x_centers);
  p.m_centers_ = std::move(m_centers);
  p.table_ = std::move(table);
  return p;
}

const Policy& Policy::piece_at(double t) const {
  const auto j = static_cast<std::size_t>(
      std::upper_bound(breakpoints_.begin(), breakpoints_.end(), t) - breakpoints_.begin());
  return pieces_[j];
}

void Policy::evaluate(double t, const double* x, const MeasureSummary& m, double* out) const {
  const std::size_t k = actions_.dim();
  switch (family_) {
    case Family::Constant:
      std::copy(a_.begin(), a_.end(), out);
      return;
    case Family::AffineClamped:
      for (std::size_t l = 0; l < k; ++l) {
        double v = k0_[l];
        for (std::size_t j = 0; j < dim_; ++j) v += K1_[l * dim_ + j] * x[j] + K2_[l * dim_ + j] * m.mean[j];
        out[l] = v;
      }
      actions_.project({out, k});
      return;
    case Family::PiecewiseConstantInTime:
      piece_at(t).evaluate(t, x, m, out);
      return;
    case Family::TabularGrid: {
      const std::size_t ix = nearest_index(x_centers_, x[0]);
      const std::size_t im = nearest_index(m_centers_, m.mean[0]);
      const double* cell = table_.data() + (ix * m_centers_.size() + im) * k;
      std::copy(cell, cell + k, out);
      return;
    }
  }
}

std::vector<double> Policy::evaluate(double t, std::span<const double> x, const MeasureSummary& m) const {
  std::vector<double> out(actions_.dim());
  evaluate(t, x.data(), m, out.data());
  return out;
}

bool Policy::state_independent_at(double t) const {
  switch (family_) {
    case Family::Constant:
      return true;
    case Family::PiecewiseConstantInTime:
      return piece_at(t).state_independent_at(t);
    case Family::TabularGrid:
      return std::all_of(table_.begin(), table_.end(), [&](double v) { return v == table_.front(); }) &&
             actions_.dim() == 1;
    case Family::AffineClamped:
      return std::all_of(K1_.begin(), K1_.end(), [](double v) { return v == 0.0; }) &&
             std::all_of(K2_.begin(), K2_.end(), [](double v) { return v == 0.0; });
  }
  return false;
}

bool Policy::state_independent() const {
  if (family_ == Family::PiecewiseConstantInTime)
    return std::all_of(pieces_.begin(), pieces_.end(), [](const Policy& p) { return p.state_independent(); });
  return state_independent_at(0.0);
}

std::vector<double> Policy::params() const {
  switch (family_) {
    case Family::Constant:
      return a_;
    case Family::AffineClamped: {
      auto v = k0_;
      v.insert(v.end(), K1_.begin(), K1_.end());
      v.insert(v.end(), K2_.begin(), K2_.end());
      return v;
    }
    case Family::PiecewiseConstantInTime: {
      std::vector<double> v;
      for (const auto& p : pieces_) {
        auto q = p.params();
        v.insert(v.end(), q.begin(), q.end());
      }
      return v;
    }
    case Family::TabularGrid:
      return table_;
  }
  return {};
}

json Policy::to_json() const {
  switch (family_) {
    case Family::Constant:
      return json{{"family", "constant"}, {"action", a_}};
    case Family::AffineClamped:
      return json{{"family", "affine_clamped"}, {"dim", dim_}, {"k0", k0_}, {"K1", K1_}, {"K2", K2_}};
    case Family::PiecewiseConstantInTime: {
      json pieces = json::array();
      for (const auto& p : pieces_) pieces.push_back(p.to_json());
      return json{{"family", "piecewise_time"}, {"breakpoints", breakpoints_}, {"pieces", pieces}};
    }
    case Family::TabularGrid:
      return json{{"family", "tabular"}, {"x_centers", x_centers_}, {"m_centers", m_centers_}, {"table", table_}};
  }
  return {};
}

Policy Policy::from_json(const json& j, const ActionSet& actions) {
  const std::string path = "policy";
  require_object(j, path);
  if (!j.contains("family")) throw ConfigError(path + ".family: missing");
  const auto fam = j.at("family").get<std::string>();
  if (fam == "constant") {
    reject_unknown_keys(j, path, {"family", "action"});
    if (!j.contains("action")) throw ConfigError(path + ".action: missing");
    return constant(actions, get_vector(j.at("action"), path + ".action"));
  }
  if (fam == "affine_clamped") {
    reject_unknown_keys(j, path, {"family", "dim", "k0", "K1", "K2"});
    const std::size_t d = j.contains("dim") ? j.at("dim").get<std::size_t>() : 1;
    const std::size_t k = actions.dim();
    auto get = [&](const char* key, std::size_t n) {
      return j.contains(key) ? get_vector(j.at(key), path + "." + key) : std::vector<double>(n, 0.0);
    };
    return affine_clamped(actions, d, get("k0", k), get("K1", k * d), get("K2", k * d));
  }
  if (fam == "piecewise_time") {
    reject_unknown_keys(j, path, {"family", "breakpoints", "pieces"});
    if (!j.contains("pieces") || !j.at("pieces").is_array()) throw ConfigError(path + ".pieces: expected an array");
    std::vector<Policy> pieces;
    for (const auto& pj : j.at("pieces")) pieces.push_back(from_json(pj, actions));
    std::vector<double> bp;
    if (j.contains("breakpoints")) bp = get_vector(j.at("breakpoints"), path + ".breakpoints");
    return piecewise(std::move(bp), std::move(pieces));
  }
  if (fam == "tabular") {
    reject_unknown_keys(j, path, {"family", "x_centers", "m_centers", "table"});
    for (const char* key : {"x_centers", "m_centers", "table"})
      if (!j.contains(key)) throw ConfigError(path + "." + key + ": missing");
    return tabular(actions, get_vector(j.at("x_centers"), path + ".x_centers"),
                   get_vector(j.at("m_centers"), path + ".m_centers"), get_vector(j.at("table"), path + ".table"));
  }
  throw ConfigError(path + ".family: unknown family '" + fam + "'");
}

std::string Policy::describe() const {
  std::ostringstream os;
  switch (family_) {
    case Family::Constant:
      os << "constant(";
      for (std::size_t i = 0; i < a_.size(); ++i) os << (i ? "," : "") << a_[i];
      os << ")";
      break;
    case Family::AffineClamped:
      os << "affine_clamped";
      break;
    case Family::PiecewiseConstantInTime:
      os << "piecewise[";
      for (std::size_t i = 0; i < pieces_.size(); ++i) os << (i ? " " : "") << pieces_[i].describe();
      os << "]";
      break;
    case Family::TabularGrid:
      os << "tabular(" << x_centers_.size() << "x" << m_centers_.size() << ")";
      break;
  }
  return os.str();
}

// -- PolicyFamily ---------------------------------------------------------------

std::size_t PolicyFamily::param_dim() const {
  const std::size_t k = actions.dim();
  switch (kind) {
    case Kind::Constant: return k;
    case Kind::AffineClamped: return k * (1 + 2 * dim);
    case Kind::PiecewiseConstantInTime: return k * static_cast<std::size_t>(windows);
  }
  return 0;
}

Policy PolicyFamily::make(std::span<const double> p) const {
  const std::size_t k = actions.dim();
  if (p.size() != param_dim()) throw ConfigError("policy family: wrong parameter count");
  switch (kind) {
    case Kind::Constant:
      return Policy::constant(actions, {p.begin(), p.end()});
    case Kind::AffineClamped:
      return Policy::affine_clamped(actions, dim, {p.begin(), p.begin() + k},
                                    {p.begin() + k, p.begin() + k + k * dim},
                                    {p.begin() + k + k * dim, p.end()});
    case Kind::PiecewiseConstantInTime: {
      std::vector<double> bp;
      std::vector<Policy> pieces;
      for (int w = 0; w < windows; ++w) {
        if (w > 0) bp.push_back(horizon * w / windows);
        pieces.push_back(Policy::constant(actions, {p.begin() + w * k, p.begin() + (w + 1) * k}));
      }
      return Policy::piecewise(std::move(bp), std::move(pieces));
    }
  }
  return {};
}

bool PolicyFamily::enumerable() const {
  return kind == Kind::Constant && actions.kind() == ActionSet::Kind::Finite;
}

std::vector<Policy> PolicyFamily::constant_candidates() const {
  std::vector<Policy> out;
  for (auto& a : actions.grid()) out.push_back(Policy::constant(actions, a));
  return out;
}

std::vector<double> PolicyFamily::lower() const {
  std::vector<double> lo;
  const std::size_t k = actions.dim();
  auto action_lo = [&] {
    if (actions.kind() == ActionSet::Kind::Box) return actions.lower();
    std::vector<double> v(k, 1e300);
    for (const auto& a : actions.grid())
      for (std::size_t i = 0; i < k; ++i) v[i] = std::min(v[i], a[i]);
    return v;
  };
  switch (kind) {
    case Kind::Constant:
      return action_lo();
    case Kind::PiecewiseConstantInTime:
      for (int w = 0; w < windows; ++w) {
        auto v = action_lo();
        lo.insert(lo.end(), v.begin(), v.end());
      }
      return lo;
    case Kind::AffineClamped:
      lo = action_lo();
      lo.resize(param_dim(), -gain_range);
      return lo;
  }
  return lo;
}

std::vector<double> PolicyFamily::upper() const {
  std::vector<double> hi;
  const std::size_t k = actions.dim();
  auto action_hi = [&] {
    if (actions.kind() == ActionSet::Kind::Box) return actions.upper();
    std::vector<double> v(k, -1e300);
    for (const auto& a : actions.grid())
      for (std::size_t i = 0; i < k; ++i) v[i] = std::max(v[i], a[i]);
    return v;
  };
  switch (kind) {
    case Kind::Constant:
      return action_hi();
    case Kind::PiecewiseConstantInTime:
      for (int w = 0; w < windows; ++w) {
        auto v = action_hi();
        hi.insert(hi.end(), v.begin(), v.end());
      }
      return hi;
    case Kind::AffineClamped:
      hi = action_hi();
      hi.resize(param_dim(), gain_range);
      return hi;
  }
  return hi;
}

json PolicyFamily::to_json() const {
  switch (kind) {
    case Kind::Constant:
      return json{{"kind", "constant"}};
    case Kind::AffineClamped:
      return json{{"kind", "affine_clamped"}, {"gain_range", gain_range}};
    case Kind::PiecewiseConstantInTime:
      return json{{"kind", "piecewise_time"}, {"windows", windows}};
  }
  return {};
}

PolicyFamily PolicyFamily::from_json(const json& j, const ActionSet& actions, std::size_t dim) {
  const std::string path = "family";
  if (j.is_string()) return from_json(json{{"kind", j.get<std::string>()}}, actions, dim);
  require_object(j, path);
  reject_unknown_keys(j, path, {"kind", "windows", "gain_range"});
  const auto kind = j.contains("kind") ? j.at("kind").get<std::string>() : std::string("constant");
  PolicyFamily f;
  f.actions = actions;
  f.dim = dim;
  if (kind == "constant") f.kind = Kind::Constant;
  else if (kind == "affine_clamped") f.kind = Kind::AffineClamped;
  else if (kind == "piecewise_time") f.kind = Kind::PiecewiseConstantInTime;
  else throw ConfigError(path + ".kind: unknown family '" + kind + "'");
  if (j.contains("windows")) {
    f.windows = j.at("windows").get<int>();
    if (f.windows < 1) throw ConfigError(path + ".windows: must be >= 1");
  }
  f.gain_range = number_or(j, "gain_range", f.gain_range, path);
  return f;
}

}  // namespace mfergodic

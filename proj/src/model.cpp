#include "mfergodic/model.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include <Eigen/Dense>

#include "json_util.hpp"
#include "mfergodic/errors.hpp"
#include "mfergodic/parallel.hpp"
#include "mfergodic/rng.hpp"

namespace mfergodic {

using nlohmann::json;
using namespace detail;

// -- ActionSet ---------------------------------------------------------------

ActionSet ActionSet::finite(std::vector<std::vector<double>> points) {
  if (points.empty()) throw ConfigError("action_set.points: must be nonempty");
  const std::size_t k = points.front().size();
  if (k == 0) throw ConfigError("action_set.points: actions must have dimension >= 1");
  for (const auto& p : points)
    if (p.size() != k) throw ConfigError("action_set.points: inconsistent action dimension");
  ActionSet s;
  s.kind_ = Kind::Finite;
  s.dim_ = k;
  s.points_ = std::move(points);
  return s;
}

ActionSet ActionSet::box(std::vector<double> lower, std::vector<double> upper, int resolution) {
  if (lower.empty() || lower.size() != upper.size())
    throw ConfigError("action_set: lower/upper must be nonempty and of equal length");
  for (std::size_t i = 0; i < lower.size(); ++i)
    if (!(lower[i] <= upper[i])) throw ConfigError("action_set: lower > upper");
  if (resolution < 1) throw ConfigError("action_set.resolution: must be >= 1");
  ActionSet s;
  s.kind_ = Kind::Box;
  s.dim_ = lower.size();
  s.lower_ = std::move(lower);
  s.upper_ = std::move(upper);
  s.resolution_ = resolution;
  return s;
}

ActionSet ActionSet::with_resolution(int resolution) const {
  if (kind_ == Kind::Finite) return *this;
  return box(lower_, upper_, resolution);
}

std::vector<std::vector<double>> ActionSet::grid() const {
  if (kind_ == Kind::Finite) return points_;
  std::vector<std::vector<double>> axes(dim_);
  for (std::size_t i = 0; i < dim_; ++i) {
    if (resolution_ == 1) {
      axes[i] = {0.5 * (lower_[i] + upper_[i])};
      continue;
    }
    for (int r = 0; r < resolution_; ++r)
      axes[i].push_back(lower_[i] + (upper_[i] - lower_[i]) * r / (resolution_ - 1));
  }
  std::vector<std::vector<double>> out{{}};
  for (const auto& axis : axes) {
    std::vector<std::vector<double>> next;
    for (const auto& prefix : out)
      for (double v : axis) {
        auto p = prefix;
        p.push_back(v);
        next.push_back(std::move(p));
      }
    out = std::move(next);
  }
  return out;
}

void ActionSet::project(std::span<double> a) const {
  if (kind_ == Kind::Box) {
    for (std::size_t i = 0; i < dim_; ++i) a[i] = std::clamp(a[i], lower_[i], upper_[i]);
    return;
  }
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < points_.size(); ++p) {
    double d2 = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) d2 += (a[i] - points_[p][i]) * (a[i] - points_[p][i]);
    if (d2 < best_d) {
      best_d = d2;
      best = p;
    }
  }
  std::copy(points_[best].begin(), points_[best].end(), a.begin());
}

bool ActionSet::contains(std::span<const double> a, double tol) const {
  if (a.size() != dim_) return false;
  if (kind_ == Kind::Box) {
    for (std::size_t i = 0; i < dim_; ++i)
      if (a[i] < lower_[i] - tol || a[i] > upper_[i] + tol) return false;
    return true;
  }
  for (const auto& p : points_) {
    bool same = true;
    for (std::size_t i = 0; i < dim_; ++i) same = same && std::abs(a[i] - p[i]) <= tol;
    if (same) return true;
  }
  return false;
}

json ActionSet::to_json() const {
  if (kind_ == Kind::Finite) return json{{"kind", "finite"}, {"points", points_}};
  return json{{"kind", "box"}, {"lower", lower_}, {"upper", upper_}, {"resolution", resolution_}};
}

ActionSet ActionSet::from_json(const json& j) {
  const std::string path = "action_set";
  require_object(j, path);
  if (!j.contains("kind")) throw ConfigError(path + ".kind: missing");
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "finite") {
    reject_unknown_keys(j, path, {"kind", "points"});
    if (!j.contains("points")) throw ConfigError(path + ".points: missing");
    std::vector<std::vector<double>> pts;
    const auto& arr = j.at("points");
    if (!arr.is_array()) throw ConfigError(path + ".points: expected an array");
    for (std::size_t i = 0; i < arr.size(); ++i)
      pts.push_back(get_vector(arr[i], path + ".points[" + std::to_string(i) + "]"));
    return finite(std::move(pts));
  }
  if (kind == "box") {
    reject_unknown_keys(j, path, {"kind", "lower", "upper", "resolution"});
    if (!j.contains("lower") || !j.contains("upper"))
      throw ConfigError(path + ": box needs lower and upper");
    int res = 33;
    if (j.contains("resolution")) {
      if (!j.at("resolution").is_number_integer())
        throw ConfigError(path + ".resolution: expected an integer");
      res = j.at("resolution").get<int>();
    }
    return box(get_vector(j.at("lower"), path + ".lower"), get_vector(j.at("upper"), path + ".upper"),
               res);
  }
  throw ConfigError(path + ".kind: unknown kind '" + kind + "'");
}

// -- Rewards -----------------------------------------------------------------

double RewardTerm::value(double z) const {
  const double u = z - center;
  switch (shape) {
    case RewardShape::Constant:
      return amplitude;
    case RewardShape::Cosine:
      return amplitude * std::cos(param * u);
    case RewardShape::Tanh:
      return amplitude * std::tanh(u / param);
    case RewardShape::GaussianBump:
      return amplitude * std::exp(-0.5 * u * u / (param * param));
    case RewardShape::ClippedQuadratic:
      return amplitude * std::min(u * u, param);
  }
  return 0.0;
}

double RewardTerm::bound() const {
  if (shape == RewardShape::ClippedQuadratic) return std::abs(amplitude) * param;
  return std::abs(amplitude);
}

double RewardTerm::lipschitz() const {
  switch (shape) {
    case RewardShape::Constant:
      return 0.0;
    case RewardShape::Cosine:
      return std::abs(amplitude * param);
    case RewardShape::Tanh:
      return std::abs(amplitude) / param;
    case RewardShape::GaussianBump:
      return std::abs(amplitude) * std::exp(-0.5) / param;
    case RewardShape::ClippedQuadratic:
      return std::abs(amplitude) * 2.0 * std::sqrt(param);
  }
  return 0.0;
}

double ActionReward::value(std::span<const double> a) const {
  double v = 0.0;
  for (std::size_t i = 0; i < linear.size() && i < a.size(); ++i) v += linear[i] * a[i];
  if (quadratic != 0.0) {
    double n2 = 0.0;
    for (double x : a) n2 += x * x;
    v -= quadratic * n2;
  }
  return v;
}

bool ActionReward::is_zero() const {
  return quadratic == 0.0 && std::all_of(linear.begin(), linear.end(), [](double x) { return x == 0.0; });
}

namespace {

const char* shape_name(RewardShape s) {
  switch (s) {
    case RewardShape::Constant: return "constant";
    case RewardShape::Cosine: return "cos";
    case RewardShape::Tanh: return "tanh";
    case RewardShape::GaussianBump: return "gaussian_bump";
    case RewardShape::ClippedQuadratic: return "clipped_quadratic";
  }
  return "constant";
}

const char* param_key(RewardShape s) {
  switch (s) {
    case RewardShape::Constant: return nullptr;
    case RewardShape::Cosine: return "omega";
    case RewardShape::Tanh: return "scale";
    case RewardShape::GaussianBump: return "width";
    case RewardShape::ClippedQuadratic: return "clip";
  }
  return nullptr;
}

RewardTerm term_from_json(const json& j, const std::string& path) {
  require_object(j, path);
  reject_unknown_keys(j, path, {"shape", "amplitude", "omega", "scale", "width", "clip", "center",
                                "coord", "on"});
  if (!j.contains("shape")) throw ConfigError(path + ".shape: missing");
  const auto name = j.at("shape").get<std::string>();
  RewardTerm t;
  if (name == "constant") t.shape = RewardShape::Constant;
  else if (name == "cos") t.shape = RewardShape::Cosine;
  else if (name == "tanh") t.shape = RewardShape::Tanh;
  else if (name == "gaussian_bump") t.shape = RewardShape::GaussianBump;
  else if (name == "clipped_quadratic") t.shape = RewardShape::ClippedQuadratic;
  else throw ConfigError(path + ".shape: unknown shape '" + name + "'");
  t.amplitude = number_or(j, "amplitude", 1.0, path);
  if (const char* key = param_key(t.shape)) t.param = number_or(j, key, 1.0, path);
  t.center = number_or(j, "center", 0.0, path);
  if (j.contains("coord")) {
    if (!is_index(j.at("coord"))) throw ConfigError(path + ".coord: expected index");
    t.coord = j.at("coord").get<std::size_t>();
  }
  if (j.contains("on")) {
    const auto on = j.at("on").get<std::string>();
    if (on != "x" && on != "mean") throw ConfigError(path + ".on: expected 'x' or 'mean'");
    t.on_mean = on == "mean";
  }
  return t;
}

json term_to_json(const RewardTerm& t) {
  json j{{"shape", shape_name(t.shape)}, {"amplitude", t.amplitude}, {"center", t.center},
         {"coord", t.coord}, {"on", t.on_mean ? "mean" : "x"}};
  if (const char* key = param_key(t.shape)) j[key] = t.param;
  return j;
}

double spectral_norm(const std::vector<double>& m, std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) return 0.0;
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> a(
      m.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  if (rows == 1 && cols == 1) return std::abs(a(0, 0));
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  return svd.singularValues()(0);
}

// Box vertices, for maxima of convex functions of the action.
std::vector<std::vector<double>> box_vertices(const ActionSet& s) {
  std::vector<std::vector<double>> out{{}};
  for (std::size_t i = 0; i < s.dim(); ++i) {
    std::vector<std::vector<double>> next;
    for (const auto& p : out)
      for (double v : {s.lower()[i], s.upper()[i]}) {
        auto q = p;
        q.push_back(v);
        next.push_back(std::move(q));
      }
    out = std::move(next);
  }
  return out;
}

std::vector<std::vector<double>> probe_actions(const ActionSet& s) {
  auto pts = s.grid();
  if (s.kind() == ActionSet::Kind::Box) {
    auto v = box_vertices(s);
    pts.insert(pts.end(), v.begin(), v.end());
  }
  return pts;
}

double max_abs_action_reward(const ModelSpec& spec) {
  const auto& ar = spec.action_reward;
  if (ar.is_zero()) return 0.0;
  auto pts = probe_actions(spec.actions);
  if (spec.actions.kind() == ActionSet::Kind::Box && ar.quadratic > 0.0) {
    // The concave part attains its maximum at the clamped stationary point.
    std::vector<double> crit(spec.actions.dim(), 0.0);
    for (std::size_t i = 0; i < crit.size(); ++i) {
      const double li = i < ar.linear.size() ? ar.linear[i] : 0.0;
      crit[i] = std::clamp(li / (2.0 * ar.quadratic), spec.actions.lower()[i], spec.actions.upper()[i]);
    }
    pts.push_back(crit);
  }
  double best = 0.0;
  for (const auto& a : pts) best = std::max(best, std::abs(ar.value(a)));
  return best;
}

}  // namespace

// -- ModelSpec ---------------------------------------------------------------

void ModelSpec::validate() const {
  if (dim == 0) throw ConfigError("model.dim: must be >= 1");
  const std::size_t d = dim, k = actions.dim();
  if (affine.has_value() == custom.has_value())
    throw ConfigError("model: exactly one of the affine coefficients or custom evaluators must be set");
  if (affine) {
    const auto& a = *affine;
    auto check = [](const std::vector<double>& v, std::size_t n, const char* key) {
      if (v.size() != n)
        throw ConfigError(std::string("model.") + key + ": expected " + std::to_string(n) +
                          " entries, got " + std::to_string(v.size()));
    };
    check(a.b0, d, "drift.b0");
    check(a.B, d * d, "drift.B");
    check(a.Bbar, d * d, "drift.Bbar");
    check(a.G, d * k, "drift.G");
    check(a.s0, d, "diffusion.s0");
    check(a.S, d * d, "diffusion.S");
    check(a.Sbar, d * d, "diffusion.Sbar");
    auto zero = [](const std::vector<double>& v) {
      return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
    };
    if (!degenerate_diffusion && zero(a.s0) && zero(a.S) && zero(a.Sbar))
      throw ConfigError("model.diffusion: identically zero; set degenerate_diffusion to allow it");
    for (const auto* v : {&a.b0, &a.B, &a.Bbar, &a.G, &a.s0, &a.S, &a.Sbar})
      for (double x : *v)
        if (!std::isfinite(x)) throw ConfigError("model: non-finite coefficient");
  } else {
    if (!custom->drift || !custom->diffusion || !custom->reward)
      throw ConfigError("model.custom: drift, diffusion and reward evaluators are all required");
  }
  for (std::size_t i = 0; i < reward_terms.size(); ++i) {
    const auto& t = reward_terms[i];
    const std::string path = "model.reward.terms[" + std::to_string(i) + "]";
    if (t.coord >= d) throw ConfigError(path + ".coord: out of range");
    if ((t.shape == RewardShape::Tanh || t.shape == RewardShape::GaussianBump ||
         t.shape == RewardShape::ClippedQuadratic) &&
        !(t.param > 0.0))
      throw ConfigError(path + ": shape parameter must be positive");
  }
  if (!action_reward.linear.empty() && action_reward.linear.size() != k)
    throw ConfigError("model.reward.action_linear: expected " + std::to_string(k) + " entries");
  if (action_reward.quadratic < 0.0)
    throw ConfigError("model.reward.action_quadratic: must be >= 0");
}

FrozenModel ModelSpec::freeze(const MeasureSummary& mu) const { return FrozenModel(*this, mu); }

void ModelSpec::drift(std::span<const double> x, const MeasureSummary& mu,
                      std::span<const double> a, std::span<double> out) const {
  freeze(mu).drift(x.data(), a.data(), out.data());
}

void ModelSpec::diffusion(std::span<const double> x, const MeasureSummary& mu,
                          std::span<const double> a, std::span<double> out) const {
  freeze(mu).diffusion(x.data(), a.data(), out.data());
}

double ModelSpec::reward(std::span<const double> x, const MeasureSummary& mu,
                         std::span<const double> a) const {
  return freeze(mu).reward(x.data(), a.data());
}

bool ModelSpec::has_state_reward() const {
  if (custom) return true;
  return std::any_of(reward_terms.begin(), reward_terms.end(), [](const RewardTerm& t) {
    return !t.on_mean && t.shape != RewardShape::Constant;
  });
}

FrozenModel::FrozenModel(const ModelSpec& spec, const MeasureSummary& mu)
    : spec_(&spec), mu_(mu), d_(spec.dim), k_(spec.actions.dim()), affine_(spec.affine.has_value()) {
  if (affine_) {
    const auto& a = *spec.affine;
    drift_offset_.assign(a.b0.begin(), a.b0.end());
    sigma_offset_.assign(a.s0.begin(), a.s0.end());
    for (std::size_t i = 0; i < d_; ++i)
      for (std::size_t j = 0; j < d_; ++j) {
        drift_offset_[i] += a.Bbar[i * d_ + j] * mu.mean[j];
        sigma_offset_[i] += a.Sbar[i * d_ + j] * mu.mean[j];
      }
    for (const auto& t : spec.reward_terms)
      if (t.on_mean) mean_reward_ += t.value(mu.mean[t.coord]);
  }
}

void FrozenModel::drift(const double* x, const double* a, double* out) const {
  if (!affine_) {
    spec_->custom->drift({x, d_}, mu_, {a, k_}, {out, d_});
    return;
  }
  const auto& c = *spec_->affine;
  for (std::size_t i = 0; i < d_; ++i) {
    double v = drift_offset_[i];
    for (std::size_t j = 0; j < d_; ++j) v += c.B[i * d_ + j] * x[j];
    for (std::size_t l = 0; l < k_; ++l) v += c.G[i * k_ + l] * a[l];
    out[i] = v;
  }
}

void FrozenModel::diffusion(const double* x, const double* a, double* out) const {
  if (!affine_) {
    spec_->custom->diffusion({x, d_}, mu_, {a, k_}, {out, d_});
    return;
  }
  const auto& c = *spec_->affine;
  for (std::size_t i = 0; i < d_; ++i) {
    double v = sigma_offset_[i];
    for (std::size_t j = 0; j < d_; ++j) v += c.S[i * d_ + j] * x[j];
    out[i] = v;
  }
}

double FrozenModel::reward(const double* x, const double* a) const {
  if (!affine_) return spec_->custom->reward({x, d_}, mu_, {a, k_});
  double v = mean_reward_;
  for (const auto& t : spec_->reward_terms)
    if (!t.on_mean) v += t.value(x[t.coord]);
  if (!spec_->action_reward.is_zero()) v += spec_->action_reward.value({a, k_});
  return v;
}

json ModelSpec::to_json() const {
  if (custom) throw ConfigError("model: custom evaluators cannot be serialized");
  const std::size_t d = dim, k = actions.dim();
  json terms = json::array();
  for (const auto& t : reward_terms) terms.push_back(term_to_json(t));
  json reward{{"terms", terms}, {"action_quadratic", action_reward.quadratic}};
  reward["action_linear"] =
      action_reward.linear.empty() ? std::vector<double>(k, 0.0) : action_reward.linear;
  json j{{"name", name},
         {"dim", dim},
         {"action_set", actions.to_json()},
         {"reward", reward},
         {"degenerate_diffusion", degenerate_diffusion}};
  if (affine) {
    const auto& a = *affine;
    j["drift"] = json{{"b0", a.b0},
                      {"B", matrix_to_json(a.B, d, d)},
                      {"Bbar", matrix_to_json(a.Bbar, d, d)},
                      {"G", matrix_to_json(a.G, d, k)}};
    j["diffusion"] = json{{"s0", a.s0},
                          {"S", matrix_to_json(a.S, d, d)},
                          {"Sbar", matrix_to_json(a.Sbar, d, d)}};
  }
  if (supplied_constants) j["constants"] = supplied_constants->to_json();
  if (supplied_eta) j["eta"] = *supplied_eta;
  return j;
}

ModelSpec ModelSpec::from_json(const json& j) {
  const std::string path = "model";
  require_object(j, path);
  reject_unknown_keys(j, path, {"name", "dim", "drift", "diffusion", "reward", "action_set",
                                "degenerate_diffusion", "constants", "eta"});
  ModelSpec m;
  if (j.contains("name")) m.name = j.at("name").get<std::string>();
  if (j.contains("dim")) {
    if (!is_index(j.at("dim")) || j.at("dim").get<std::size_t>() == 0)
      throw ConfigError(path + ".dim: expected a positive integer");
    m.dim = j.at("dim").get<std::size_t>();
  }
  if (j.contains("action_set")) m.actions = ActionSet::from_json(j.at("action_set"));
  const std::size_t d = m.dim, k = m.actions.dim();
  AffineDynamics a;
  a.b0.assign(d, 0.0);
  a.B.assign(d * d, 0.0);
  a.Bbar.assign(d * d, 0.0);
  a.G.assign(d * k, 0.0);
  a.s0.assign(d, 0.0);
  a.S.assign(d * d, 0.0);
  a.Sbar.assign(d * d, 0.0);
  if (j.contains("drift")) {
    const auto& dj = j.at("drift");
    require_object(dj, path + ".drift");
    reject_unknown_keys(dj, path + ".drift", {"b0", "B", "Bbar", "G"});
    if (dj.contains("b0")) a.b0 = get_vector(dj.at("b0"), path + ".drift.b0");
    if (dj.contains("B")) a.B = get_matrix(dj.at("B"), d, d, path + ".drift.B");
    if (dj.contains("Bbar")) a.Bbar = get_matrix(dj.at("Bbar"), d, d, path + ".drift.Bbar");
    if (dj.contains("G")) a.G = get_matrix(dj.at("G"), d, k, path + ".drift.G");
  }
  if (j.contains("diffusion")) {
    const auto& sj = j.at("diffusion");
    require_object(sj, path + ".diffusion");
    reject_unknown_keys(sj, path + ".diffusion", {"s0", "S", "Sbar"});
    if (sj.contains("s0")) a.s0 = get_vector(sj.at("s0"), path + ".diffusion.s0");
    if (sj.contains("S")) a.S = get_matrix(sj.at("S"), d, d, path + ".diffusion.S");
    if (sj.contains("Sbar")) a.Sbar = get_matrix(sj.at("Sbar"), d, d, path + ".diffusion.Sbar");
  }
  m.affine = std::move(a);
  if (j.contains("reward")) {
    const auto& rj = j.at("reward");
    require_object(rj, path + ".reward");
    reject_unknown_keys(rj, path + ".reward", {"terms", "action_linear", "action_quadratic"});
    if (rj.contains("terms")) {
      const auto& arr = rj.at("terms");
      if (!arr.is_array()) throw ConfigError(path + ".reward.terms: expected an array");
      for (std::size_t i = 0; i < arr.size(); ++i)
        m.reward_terms.push_back(term_from_json(arr[i], path + ".reward.terms[" + std::to_string(i) + "]"));
    }
    if (rj.contains("action_linear"))
      m.action_reward.linear = get_vector(rj.at("action_linear"), path + ".reward.action_linear");
    m.action_reward.quadratic = number_or(rj, "action_quadratic", 0.0, path + ".reward");
  }
  if (j.contains("degenerate_diffusion")) m.degenerate_diffusion = j.at("degenerate_diffusion").get<bool>();
  if (j.contains("constants")) m.supplied_constants = LipschitzConstants::from_json(j.at("constants"));
  if (j.contains("eta")) m.supplied_eta = get_number(j.at("eta"), path + ".eta");
  m.validate();
  return m;
}

// -- Constants ---------------------------------------------------------------

json LipschitzConstants::to_json() const {
  return json{{"L_bx", L_bx}, {"L_bmu", L_bmu}, {"L_sx", L_sx}, {"L_smu", L_smu},
              {"M", M},       {"M_f", M_f},     {"L_f", L_f}};
}

LipschitzConstants LipschitzConstants::from_json(const json& j) {
  const std::string path = "model.constants";
  require_object(j, path);
  reject_unknown_keys(j, path, {"L_bx", "L_bmu", "L_sx", "L_smu", "M", "M_f", "L_f"});
  LipschitzConstants c;
  for (const char* key : {"L_bx", "L_bmu", "L_sx", "L_smu", "M", "M_f", "L_f"})
    if (!j.contains(key)) throw ConfigError(path + "." + key + ": missing");
  c.L_bx = get_number(j.at("L_bx"), path + ".L_bx");
  c.L_bmu = get_number(j.at("L_bmu"), path + ".L_bmu");
  c.L_sx = get_number(j.at("L_sx"), path + ".L_sx");
  c.L_smu = get_number(j.at("L_smu"), path + ".L_smu");
  c.M = get_number(j.at("M"), path + ".M");
  c.M_f = get_number(j.at("M_f"), path + ".M_f");
  c.L_f = get_number(j.at("L_f"), path + ".L_f");
  return c;
}

LipschitzConstants lipschitz_constants(const ModelSpec& spec) {
  spec.validate();
  if (spec.custom) {
    if (!spec.supplied_constants)
      throw MissingConstantsError("model.constants: custom evaluators require supplied constants");
    return *spec.supplied_constants;
  }
  const auto& a = *spec.affine;
  const std::size_t d = spec.dim, k = spec.actions.dim();
  LipschitzConstants c;
  c.L_bx = spectral_norm(a.B, d, d);
  c.L_bmu = spectral_norm(a.Bbar, d, d);
  c.L_sx = spectral_norm(a.S, d, d);
  c.L_smu = spectral_norm(a.Sbar, d, d);
  double s0_norm = 0.0;
  for (double s : a.s0) s0_norm += s * s;
  s0_norm = std::sqrt(s0_norm);
  // |b(0, delta_0, a)| is convex in a, so the grid plus box vertices suffice.
  for (const auto& act : probe_actions(spec.actions)) {
    double n2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      double v = a.b0[i];
      for (std::size_t l = 0; l < k; ++l) v += a.G[i * k + l] * act[l];
      n2 += v * v;
    }
    c.M = std::max(c.M, std::sqrt(n2) + s0_norm);
  }
  double bound_x = 0.0, bound_mean = 0.0, lip_x = 0.0, lip_mean = 0.0;
  for (const auto& t : spec.reward_terms) {
    (t.on_mean ? bound_mean : bound_x) += t.bound();
    (t.on_mean ? lip_mean : lip_x) += t.lipschitz();
  }
  c.M_f = bound_x + bound_mean + max_abs_action_reward(spec);
  // |f(x,mu,a) - f(x',mu',a)| <= lip_x |x-x'| + lip_mean W2 <= max(.)(|x-x'| + W2)
  c.L_f = std::max(lip_x, lip_mean);
  return c;
}

// -- Dissipativity -------------------------------------------------------------

double second_moment_ceiling(double eta, double M, double L_sx, double L_smu) {
  if (!(eta > 0.0)) return std::numeric_limits<double>::infinity();
  // With y = E|X_t|^2, the moment identity and |b(0,d0,a)|, |sigma(0,d0,a)| <= M give
  //   y' <= -2 eta y + c sqrt(y) + M^2,   c = 2 M (1 + L_sx + L_smu),
  // using E|X| <= sqrt(y) and W2(P_X, delta_0) = sqrt(y). Young's inequality
  //   c sqrt(y) <= eta y + c^2 / (4 eta)
  // leaves y' <= -eta y + M^2 + c^2/(4 eta), hence y(t) <= y(0) e^{-eta t} + K with
  //   K = (M^2 + M^2 (1 + L_sx + L_smu)^2 / eta) / eta.
  const double s = 1.0 + L_sx + L_smu;
  return (M * M + M * M * s * s / eta) / eta;
}

namespace {

double eta_from(double gamma, const LipschitzConstants& c) {
  return gamma - (c.L_bmu + c.L_sx * c.L_smu + 0.5 * c.L_smu * c.L_smu);
}

}  // namespace

DissipativityReport dissipativity_margin(const ModelSpec& spec) {
  const auto c = lipschitz_constants(spec);
  DissipativityReport r;
  if (spec.affine) {
    const auto& a = *spec.affine;
    const auto d = static_cast<Eigen::Index>(spec.dim);
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> B(
        a.B.data(), d, d), S(a.S.data(), d, d);
    // <B h, h> + |S h|^2 / 2 <= -gamma |h|^2 for all h.
    const Eigen::MatrixXd Q = 0.5 * (B + B.transpose()) + 0.5 * S.transpose() * S;
    double top;
    if (d == 1) {
      top = Q(0, 0);
    } else {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Q);
      top = es.eigenvalues().maxCoeff();
    }
    r.gamma = -top;
    r.eta = eta_from(*r.gamma, c);
  } else if (spec.supplied_eta) {
    r.eta = *spec.supplied_eta;
    r.note = "custom model: analytic gamma unavailable, eta supplied";
  } else {
    r.eta = std::numeric_limits<double>::quiet_NaN();
    r.note = "custom model: analytic gamma unavailable, defer to sampled check";
  }
  r.K = second_moment_ceiling(r.eta, c.M, c.L_sx, c.L_smu);
  r.passed = r.eta > 0.0;
  if (!r.passed && r.note.empty()) r.note = "eta <= 0";
  return r;
}

PairedCloudTerms dissipativity_lhs(const ModelSpec& spec, std::span<const double> xi,
                                   std::span<const double> xi_prime, std::span<const double> a) {
  const std::size_t d = spec.dim;
  const EmpiricalMeasure m1(xi, d), m2(xi_prime, d);
  const auto s1 = m1.summary(), s2 = m2.summary();
  const FrozenModel f1(spec, s1), f2(spec, s2);
  std::vector<double> b1(d), b2(d), g1(d), g2(d);
  PairedCloudTerms out;
  const std::size_t n = m1.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = xi.data() + i * d;
    const double* y = xi_prime.data() + i * d;
    f1.drift(x, a.data(), b1.data());
    f2.drift(y, a.data(), b2.data());
    f1.diffusion(x, a.data(), g1.data());
    f2.diffusion(y, a.data(), g2.data());
    for (std::size_t k = 0; k < d; ++k) {
      const double h = x[k] - y[k];
      out.lhs += (b1[k] - b2[k]) * h + 0.5 * (g1[k] - g2[k]) * (g1[k] - g2[k]);
      out.mean_sq_gap += h * h;
    }
  }
  out.lhs /= static_cast<double>(n);
  out.mean_sq_gap /= static_cast<double>(n);
  return out;
}

DissipativityReport sample_check_dissipativity(const ModelSpec& spec, std::size_t n_samples,
                                               std::size_t particle_count, std::uint64_t seed,
                                               std::optional<double> eta) {
  if (n_samples < 1) throw ConfigError("n_samples: must be >= 1");
  if (particle_count < 1) throw ConfigError("particle_count: must be >= 1");
  DissipativityReport r;
  if (spec.affine || spec.supplied_eta) r = dissipativity_margin(spec);
  if (eta) r.eta = *eta;
  if (!std::isfinite(r.eta)) throw ConfigError("eta: required for the sampled check of a custom model");

  const std::size_t d = spec.dim, k = spec.actions.dim();
  const auto grid = spec.actions.grid();
  constexpr std::size_t kChunk = 256;
  const std::size_t chunks = (n_samples + kChunk - 1) / kChunk;
  std::vector<std::size_t> violations(chunks, 0);
  std::vector<double> worst(chunks, -std::numeric_limits<double>::infinity());

  parallel_for(chunks, [&](std::size_t c) {
    RngStream rng(seed, c);
    std::vector<double> xi(particle_count * d), xp(particle_count * d), act(k);
    const std::size_t begin = c * kChunk, end = std::min(n_samples, begin + kChunk);
    for (std::size_t s = begin; s < end; ++s) {
      // Random cloud, then a partner cloud from one of four pairing schemes.
      const double loc = 10.0 * rng.uniform() - 5.0;
      const double scale = std::exp(4.0 * rng.uniform() - 2.0);
      for (double& v : xi) v = loc + scale * rng.normal();
      const int scheme = static_cast<int>(rng.uniform() * 4.0);
      const double shift = 4.0 * rng.uniform() - 2.0;
      const double eps = std::exp(4.0 * rng.uniform() - 3.0);
      for (std::size_t i = 0; i < xp.size(); ++i) {
        switch (scheme) {
          case 0: xp[i] = 10.0 * rng.uniform() - 5.0 + scale * rng.normal(); break;
          case 1: xp[i] = xi[i] + eps * rng.normal(); break;
          case 2: xp[i] = xi[i] + shift; break;
          default: xp[i] = (1.0 + shift) * xi[i]; break;
        }
      }
      if (spec.actions.kind() == ActionSet::Kind::Finite) {
        act = grid[std::min(grid.size() - 1, static_cast<std::size_t>(rng.uniform() * grid.size()))];
      } else {
        for (std::size_t l = 0; l < k; ++l)
          act[l] = spec.actions.lower()[l] + rng.uniform() * (spec.actions.upper()[l] - spec.actions.lower()[l]);
      }
      const auto t = dissipativity_lhs(spec, xi, xp, act);
      const double rhs = -r.eta * t.mean_sq_gap;
      const double excess = t.lhs - rhs;
      worst[c] = std::max(worst[c], excess);
      if (excess > 1e-10 * (std::abs(t.lhs) + std::abs(rhs))) ++violations[c];
    }
  });

  r.samples = n_samples;
  r.violations = 0;
  r.worst_violation = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < chunks; ++c) {
    r.violations += violations[c];
    r.worst_violation = std::max(r.worst_violation, worst[c]);
  }
  r.passed = r.eta > 0.0 && r.violations == 0;
  if (r.violations > 0) r.note = std::to_string(r.violations) + " sampled violations";
  else if (!(r.eta > 0.0)) r.note = "eta <= 0";
  return r;
}

DissipativityReport check_dissipativity(const ModelSpec& spec, std::uint64_t seed,
                                        std::size_t n_samples, std::size_t particle_count) {
  auto analytic = dissipativity_margin(spec);
  if (!std::isfinite(analytic.eta)) return analytic;
  auto sampled = sample_check_dissipativity(spec, n_samples, particle_count, seed, analytic.eta);
  return sampled;
}

json DissipativityReport::to_json() const {
  json j{{"eta", eta},
         {"K", std::isfinite(K) ? json(K) : json(nullptr)},
         {"samples", samples},
         {"violations", violations},
         {"worst_violation", samples > 0 ? json(worst_violation) : json(nullptr)},
         {"passed", passed},
         {"note", note}};
  j["gamma"] = gamma ? json(*gamma) : json(nullptr);
  return j;
}

std::string DissipativityReport::table() const {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "gamma            " << (gamma ? std::to_string(*gamma) : std::string("n/a")) << '\n'
     << "eta              " << eta << '\n'
     << "K                " << K << '\n'
     << "samples          " << samples << '\n'
     << "violations       " << violations << '\n'
     << "worst violation  " << (samples > 0 ? std::to_string(worst_violation) : std::string("n/a")) << '\n'
     << "status           " << (passed ? "PASS" : "FAIL") << (note.empty() ? "" : " (" + note + ")")
     << '\n';
  return os.str();
}

}  // namespace mfergodic

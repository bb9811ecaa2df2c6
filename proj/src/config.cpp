#include "mfergodic/config.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json_util.hpp"
#include "mfergodic/errors.hpp"

namespace mfergodic {

using nlohmann::json;
using namespace detail;

namespace {

NamedLaw named_law(const json& j, const std::string& path, std::size_t dim) {
  require_object(j, path);
  InitialLaw law;
  try {
    law = InitialLaw::from_json(j, dim);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  if (law.name.empty()) throw ConfigError(path + ".name: every probe needs a name");
  return {law.name, law};
}

json named_json(const NamedLaw& n) {
  auto j = n.law.to_json();
  j["name"] = n.id;
  return j;
}

std::size_t get_count(const json& j, const char* key, std::size_t fallback, const std::string& path) {
  if (!j.contains(key)) return fallback;
  if (!is_index(j.at(key))) throw ConfigError(path + "." + key + ": expected a non-negative integer");
  return j.at(key).get<std::size_t>();
}

int get_int(const json& j, const char* key, int fallback, const std::string& path) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number_integer()) throw ConfigError(path + "." + key + ": expected an integer");
  return j.at(key).get<int>();
}

std::string get_string(const json& j, const char* key, const std::string& fallback, const std::string& path) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_string()) throw ConfigError(path + "." + key + ": expected a string");
  return j.at(key).get<std::string>();
}

std::optional<LraWindow> window_from(const json& j, const std::string& path) {
  if (!j.contains("window")) return std::nullopt;
  const auto& w = j.at("window");
  require_object(w, path + ".window");
  reject_unknown_keys(w, path + ".window", {"T", "burn_in"});
  LraWindow out{get_number(w.at("T"), path + ".window.T"), get_number(w.at("burn_in"), path + ".window.burn_in")};
  if (!(out.burn_in >= 0.0 && out.burn_in < out.T)) throw ConfigError(path + ".window: need 0 <= burn_in < T");
  return out;
}

// Re-throws json type errors as config errors naming the offending block.
template <class F>
auto guarded(const std::string& path, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

json ExperimentConfig::to_json() const {
  json ops;
  ops["check"] = {{"samples", check.samples}, {"particles", check.particles}};
  ops["simulate"] = {{"T", simulate.T}, {"stride", simulate.stride}};
  if (simulate.policy) ops["simulate"]["policy"] = *simulate.policy;
  ops["couple"] = {{"T", couple.T}, {"stride", couple.stride}, {"gap", couple.gap}};
  ops["value-beta"] = {{"beta", value_beta.beta}};
  ops["value-T"] = {{"T", value_T.T}, {"terminal", value_T.terminal}, {"penalty_weight", value_T.penalty_weight},
                    {"windows", value_T.windows}};
  ops["fixed-point"] = {{"T", fixed_point.T}, {"probe", named_json(fixed_point.probe)}};
  json hjb_probes = json::array();
  for (const auto& p : hjb.probes) hjb_probes.push_back(named_json(p));
  ops["hjb-residual"] = {{"source", hjb.source},        {"action", hjb.action},
                         {"probes", hjb_probes},        {"cloud_size", hjb.cloud_size},
                         {"action_resolution", hjb.action_resolution}};
  json greedy{{"x_centers", verify.greedy.x_centers},
              {"m_centers", verify.greedy.m_centers},
              {"reference_sd", verify.greedy.reference_sd},
              {"cloud_size", verify.greedy.cloud_size},
              {"action_resolution", verify.greedy.action_resolution}};
  ops["verify"] = {{"source", verify.source}, {"oracle_action", verify.oracle_action}, {"greedy", greedy}};
  if (verify.wrong_action) ops["verify"]["wrong_action"] = *verify.wrong_action;
  if (verify.window) ops["verify"]["window"] = {{"T", verify.window->T}, {"burn_in", verify.window->burn_in}};

  json j{{"schema-version", schema_version},
         {"benchmark", benchmark},
         {"seed", seed},
         {"model", model.to_json()},
         {"initial_law", initial_law.to_json()},
         {"family", family.to_json()},
         {"sim", sim.to_json()},
         {"optimizer", optimizer.to_json()},
         {"ergodic", ergodic.to_json()},
         {"tauberian", tauberian.to_json()},
         {"output_dir", output_dir},
         {"operations", ops}};
  if (oracle_lambda) j["oracle_lambda"] = *oracle_lambda;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j, const std::filesystem::path& base) {
  require_object(j, "config");
  reject_unknown_keys(j, "config",
                      {"schema-version", "benchmark", "seed", "model", "model_file", "initial_law", "family", "sim",
                       "optimizer", "ergodic", "tauberian", "oracle_lambda", "output_dir", "operations"});
  ExperimentConfig c;
  if (!j.contains("schema-version")) throw ConfigError("schema-version: missing");
  if (!j.at("schema-version").is_number_integer() || j.at("schema-version").get<int>() != kSchemaVersion)
    throw ConfigError("schema-version: expected " + std::to_string(kSchemaVersion));
  if (!j.contains("seed")) throw ConfigError("seed: missing (seeds are mandatory)");
  if (!is_index(j.at("seed"))) throw ConfigError("seed: expected a non-negative integer");
  c.seed = j.at("seed").get<std::uint64_t>();
  c.benchmark = get_string(j, "benchmark", "", "config");
  if (c.benchmark.empty()) throw ConfigError("benchmark: missing");

  if (j.contains("model") == j.contains("model_file")) throw ConfigError("model: give exactly one of model, model_file");
  if (j.contains("model")) {
    c.model = guarded("model", [&] { return ModelSpec::from_json(j.at("model")); });
  } else {
    const auto file = base / get_string(j, "model_file", "", "config");
    std::ifstream in(file);
    if (!in) throw ConfigError("model_file: cannot open " + file.string());
    json mj;
    try {
      in >> mj;
    } catch (const json::exception& e) {
      throw ConfigError("model_file: " + file.string() + ": " + e.what());
    }
    c.model = guarded("model_file", [&] { return ModelSpec::from_json(mj); });
  }
  const std::size_t d = c.model.dim;
  c.initial_law = InitialLaw::point_mass(std::vector<double>(d, 0.0), "origin");
  if (j.contains("initial_law"))
    c.initial_law = guarded("initial_law", [&] { return InitialLaw::from_json(j.at("initial_law"), d); });
  if (c.initial_law.name.empty()) c.initial_law.name = c.initial_law.label();
  c.family = PolicyFamily::constant(c.model.actions);
  c.family.dim = d;
  if (j.contains("family"))
    c.family = guarded("family", [&] { return PolicyFamily::from_json(j.at("family"), c.model.actions, d); });
  if (j.contains("sim")) c.sim = guarded("sim", [&] { return SimConfig::from_json(j.at("sim")); });
  if (j.contains("optimizer"))
    c.optimizer = guarded("optimizer", [&] { return OptimizerConfig::from_json(j.at("optimizer")); });
  if (j.contains("ergodic")) c.ergodic = guarded("ergodic", [&] { return ErgodicConfig::from_json(j.at("ergodic")); });
  if (d != 1) c.ergodic.grid_means.clear(), c.ergodic.grid_sds.clear();
  if (j.contains("tauberian"))
    c.tauberian = guarded("tauberian", [&] { return TauberianConfig::from_json(j.at("tauberian")); });
  if (j.contains("oracle_lambda")) c.oracle_lambda = get_number(j.at("oracle_lambda"), "oracle_lambda");
  c.output_dir = get_string(j, "output_dir", c.output_dir, "config");

  c.fixed_point.probe = {"origin", InitialLaw::point_mass(std::vector<double>(d, 0.0), "origin")};
  c.hjb.action = std::vector<double>(c.model.actions.dim(), 0.0);
  c.verify.oracle_action = c.hjb.action;
  if (j.contains("operations")) {
    const auto& ops = j.at("operations");
    require_object(ops, "operations");
    reject_unknown_keys(ops, "operations",
                        {"check", "simulate", "couple", "value-beta", "value-T", "fixed-point", "hjb-residual", "verify"});
    guarded("operations", [&] {
      if (ops.contains("check")) {
        const auto& o = ops.at("check");
        const std::string p = "operations.check";
        require_object(o, p);
        reject_unknown_keys(o, p, {"samples", "particles"});
        c.check.samples = get_count(o, "samples", c.check.samples, p);
        c.check.particles = get_count(o, "particles", c.check.particles, p);
        if (c.check.samples == 0 || c.check.particles < 2) throw ConfigError(p + ": need samples >= 1, particles >= 2");
      }
      if (ops.contains("simulate")) {
        const auto& o = ops.at("simulate");
        const std::string p = "operations.simulate";
        require_object(o, p);
        reject_unknown_keys(o, p, {"T", "stride", "policy"});
        c.simulate.T = number_or(o, "T", c.simulate.T, p);
        c.simulate.stride = get_count(o, "stride", c.simulate.stride, p);
        if (o.contains("policy")) {
          Policy::from_json(o.at("policy"), c.model.actions);
          c.simulate.policy = o.at("policy");
        }
        if (!(c.simulate.T > 0.0) || c.simulate.stride == 0) throw ConfigError(p + ": need T > 0 and stride >= 1");
      }
      if (ops.contains("couple")) {
        const auto& o = ops.at("couple");
        const std::string p = "operations.couple";
        require_object(o, p);
        reject_unknown_keys(o, p, {"T", "stride", "gap"});
        c.couple.T = number_or(o, "T", c.couple.T, p);
        c.couple.stride = get_count(o, "stride", c.couple.stride, p);
        c.couple.gap = number_or(o, "gap", c.couple.gap, p);
        if (!(c.couple.T > 0.0) || c.couple.stride == 0) throw ConfigError(p + ": need T > 0 and stride >= 1");
      }
      if (ops.contains("value-beta")) {
        const auto& o = ops.at("value-beta");
        const std::string p = "operations.value-beta";
        require_object(o, p);
        reject_unknown_keys(o, p, {"beta"});
        c.value_beta.beta = number_or(o, "beta", c.value_beta.beta, p);
        if (!(c.value_beta.beta > 0.0)) throw ConfigError(p + ".beta: must be > 0");
      }
      if (ops.contains("value-T")) {
        const auto& o = ops.at("value-T");
        const std::string p = "operations.value-T";
        require_object(o, p);
        reject_unknown_keys(o, p, {"T", "terminal", "penalty_weight", "windows"});
        c.value_T.T = number_or(o, "T", c.value_T.T, p);
        c.value_T.terminal = get_string(o, "terminal", c.value_T.terminal, p);
        c.value_T.penalty_weight = number_or(o, "penalty_weight", c.value_T.penalty_weight, p);
        c.value_T.windows = get_int(o, "windows", c.value_T.windows, p);
        if (!(c.value_T.T > 0.0)) throw ConfigError(p + ".T: must be > 0");
        if (c.value_T.terminal != "zero" && c.value_T.terminal != "mean_abs_penalty" && c.value_T.terminal != "phi_hat")
          throw ConfigError(p + ".terminal: expected zero, mean_abs_penalty or phi_hat");
        if (c.value_T.windows < 1) throw ConfigError(p + ".windows: must be >= 1");
      }
      if (ops.contains("fixed-point")) {
        const auto& o = ops.at("fixed-point");
        const std::string p = "operations.fixed-point";
        require_object(o, p);
        reject_unknown_keys(o, p, {"T", "probe"});
        c.fixed_point.T = number_or(o, "T", c.fixed_point.T, p);
        if (o.contains("probe")) c.fixed_point.probe = named_law(o.at("probe"), p + ".probe", d);
        if (!(c.fixed_point.T > 0.0)) throw ConfigError(p + ".T: must be > 0");
      }
      if (ops.contains("hjb-residual")) {
        const auto& o = ops.at("hjb-residual");
        const std::string p = "operations.hjb-residual";
        require_object(o, p);
        reject_unknown_keys(o, p, {"source", "action", "probes", "cloud_size", "action_resolution"});
        c.hjb.source = get_string(o, "source", c.hjb.source, p);
        if (c.hjb.source != "poisson_oracle" && c.hjb.source != "phi_hat")
          throw ConfigError(p + ".source: expected poisson_oracle or phi_hat");
        if (o.contains("action")) c.hjb.action = get_vector(o.at("action"), p + ".action");
        if (o.contains("probes"))
          for (std::size_t i = 0; i < o.at("probes").size(); ++i)
            c.hjb.probes.push_back(named_law(o.at("probes")[i], p + ".probes[" + std::to_string(i) + "]", d));
        c.hjb.cloud_size = get_count(o, "cloud_size", c.hjb.cloud_size, p);
        c.hjb.action_resolution = get_int(o, "action_resolution", c.hjb.action_resolution, p);
        if (c.hjb.cloud_size < 2) throw ConfigError(p + ".cloud_size: must be >= 2");
      }
      if (ops.contains("verify")) {
        const auto& o = ops.at("verify");
        const std::string p = "operations.verify";
        require_object(o, p);
        reject_unknown_keys(o, p, {"source", "oracle_action", "wrong_action", "greedy", "window"});
        c.verify.source = get_string(o, "source", c.verify.source, p);
        if (c.verify.source != "poisson_oracle" && c.verify.source != "phi_hat")
          throw ConfigError(p + ".source: expected poisson_oracle or phi_hat");
        if (o.contains("oracle_action")) c.verify.oracle_action = get_vector(o.at("oracle_action"), p + ".oracle_action");
        if (o.contains("wrong_action")) c.verify.wrong_action = get_vector(o.at("wrong_action"), p + ".wrong_action");
        if (o.contains("greedy")) {
          const auto& g = o.at("greedy");
          const std::string gp = p + ".greedy";
          require_object(g, gp);
          reject_unknown_keys(g, gp, {"x_centers", "m_centers", "reference_sd", "cloud_size", "action_resolution"});
          if (g.contains("x_centers")) c.verify.greedy.x_centers = get_vector(g.at("x_centers"), gp + ".x_centers");
          if (g.contains("m_centers")) c.verify.greedy.m_centers = get_vector(g.at("m_centers"), gp + ".m_centers");
          c.verify.greedy.reference_sd = number_or(g, "reference_sd", c.verify.greedy.reference_sd, gp);
          c.verify.greedy.cloud_size = get_count(g, "cloud_size", c.verify.greedy.cloud_size, gp);
          c.verify.greedy.action_resolution = get_int(g, "action_resolution", c.verify.greedy.action_resolution, gp);
        }
        c.verify.window = window_from(o, p);
      }
      return 0;
    });
  }
  if (c.hjb.action.size() != c.model.actions.dim() || c.verify.oracle_action.size() != c.model.actions.dim())
    throw ConfigError("operations: oracle actions must match the action dimension");
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("config: cannot open " + file.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config: " + file.string() + ": " + e.what());
  }
  return from_json(j, file.parent_path());
}

std::string ExperimentConfig::hash() const {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(to_json().dump());
  return os.str();
}

// -- Ledger ------------------------------------------------------------------------

std::string ResultsLedger::header() { return "timestamp,benchmark,operation,seed,estimate,stderr,runtime_s,config_hash"; }

std::string ResultsLedger::now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void ResultsLedger::append(const LedgerRow& row) const {
  if (file_.has_parent_path()) std::filesystem::create_directories(file_.parent_path());
  const bool fresh = !std::filesystem::exists(file_) || std::filesystem::file_size(file_) == 0;
  std::ofstream out(file_, std::ios::app);
  if (!out) throw ConfigError("output_dir: cannot write ledger " + file_.string());
  if (fresh) out << header() << '\n';
  out << std::setprecision(17) << row.timestamp << ',' << row.benchmark << ',' << row.operation << ',' << row.seed
      << ',' << row.estimate << ',' << row.stderr_ << ',' << std::setprecision(6) << row.runtime_s << ','
      << row.config_hash << '\n';
}

std::vector<LedgerRow> ResultsLedger::read() const {
  std::vector<LedgerRow> rows;
  std::ifstream in(file_);
  std::string line;
  if (!std::getline(in, line)) return rows;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::vector<std::string> f;
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 8) continue;
    rows.push_back({f[0], f[1], f[2], std::stoull(f[3]), std::stod(f[4]), std::stod(f[5]), std::stod(f[6]), f[7]});
  }
  return rows;
}

// -- Plot data ---------------------------------------------------------------------

std::string emit_plot_data(const json& results, const std::string& kind) {
  std::ostringstream os;
  os.precision(12);
  auto need = [&](const json& j, const char* key) -> const json& {
    if (!j.contains(key)) throw ConfigError("results." + std::string(key) + ": missing for the " + kind + " plot");
    return j.at(key);
  };
  const bool empty = results.is_null() || results.empty();
  if (kind == "tauberian") {
    os << "beta,beta_v,stderr\n";
    if (empty) return os.str();
    // Either a tauberian report (first route set) or an ergodic pair.
    const json& src = results.contains("first") ? results.at("first") : results;
    const auto& betas = need(results, "betas");
    const auto& vals = src.contains("discount_by_beta") ? src.at("discount_by_beta") : need(src, "lambda_by_beta");
    if (betas.size() != vals.size()) throw ConfigError("results.betas: length does not match the per-beta values");
    for (std::size_t j = 0; j < betas.size(); ++j)
      os << betas[j].get<double>() << ',' << vals[j].at("estimate").get<double>() << ','
         << vals[j].at("stderr").get<double>() << '\n';
  } else if (kind == "cesaro") {
    os << "T,v_over_T,stderr\n";
    if (empty) return os.str();
    const json& src = results.contains("first") ? results.at("first") : results;
    const auto& Ts = need(results, "horizons");
    const auto& vals = need(src, "horizon_by_T");
    if (Ts.size() != vals.size()) throw ConfigError("results.horizons: length does not match horizon_by_T");
    for (std::size_t k = 0; k < Ts.size(); ++k)
      os << Ts[k].get<double>() << ',' << vals[k].at("estimate").get<double>() << ','
         << vals[k].at("stderr").get<double>() << '\n';
  } else if (kind == "contraction") {
    os << "t,gap,envelope\n";
    if (empty) return os.str();
    const auto& t = need(results, "times");
    const auto& g = need(results, "mean_sq_gap");
    const double eta = need(results, "eta").get<double>();
    if (t.size() != g.size()) throw ConfigError("results.times: length does not match mean_sq_gap");
    const double g0 = g.empty() ? 0.0 : g[0].get<double>();
    for (std::size_t k = 0; k < t.size(); ++k)
      os << t[k].get<double>() << ',' << g[k].get<double>() << ',' << g0 * std::exp(-2.0 * eta * t[k].get<double>())
         << '\n';
  } else {
    throw ConfigError("kind: unknown plot kind '" + kind + "' (tauberian, cesaro, contraction)");
  }
  return os.str();
}

}  // namespace mfergodic

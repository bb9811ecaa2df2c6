#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfergodic/derivative.hpp"
#include "mfergodic/ergodic.hpp"
#include "mfergodic/model.hpp"
#include "mfergodic/optimizer.hpp"
#include "mfergodic/particle.hpp"
#include "mfergodic/policy.hpp"
#include "mfergodic/value.hpp"

namespace mfergodic {

constexpr int kSchemaVersion = 1;

/// Parameter blocks of the individual subcommands; every field has a default.
struct CheckParams {
  std::size_t samples = 2000;
  std::size_t particles = 32;
};

struct SimulateParams {
  double T = 10.0;
  std::size_t stride = 10;
  std::optional<nlohmann::json> policy;  // default: first constant candidate
};

struct CoupleParams {
  double T = 3.0;
  std::size_t stride = 10;
  double gap = 1.0;  // second cloud = first cloud shifted by gap in every coordinate
};

struct ValueBetaParams {
  double beta = 0.1;
};

struct ValueTParams {
  double T = 5.0;
  std::string terminal = "zero";  // zero | mean_abs_penalty | phi_hat
  double penalty_weight = 1.0;
  int windows = 4;
};

struct FixedPointParams {
  double T = 2.0;
  NamedLaw probe{"origin", InitialLaw::point_mass({0.0}, "origin")};
};

/// Derivative sources: "poisson_oracle" (exact bias function of the
/// uncontrolled linear model at `action`) or "phi_hat" (interpolated table).
struct HjbParams {
  std::string source = "poisson_oracle";
  std::vector<double> action{0.0};
  std::vector<NamedLaw> probes;
  std::size_t cloud_size = 4096;
  int action_resolution = 33;
};

struct VerifyParams {
  std::string source = "poisson_oracle";
  std::vector<double> oracle_action{0.0};
  std::optional<std::vector<double>> wrong_action;
  GreedyConfig greedy;
  std::optional<LraWindow> window;
};

struct ExperimentConfig {
  int schema_version = kSchemaVersion;
  std::string benchmark;
  std::uint64_t seed = 0;
  ModelSpec model;
  InitialLaw initial_law = InitialLaw::point_mass({0.0}, "origin");
  PolicyFamily family;
  SimConfig sim;
  OptimizerConfig optimizer;
  ErgodicConfig ergodic;
  TauberianConfig tauberian;
  std::optional<double> oracle_lambda;  // reference value carried with the benchmark
  std::string output_dir = "mfergodic-out";

  CheckParams check;
  SimulateParams simulate;
  CoupleParams couple;
  ValueBetaParams value_beta;
  ValueTParams value_T;
  FixedPointParams fixed_point;
  HjbParams hjb;
  VerifyParams verify;

  /// Canonical form: every field explicit, keys sorted.
  nlohmann::json to_json() const;
  /// Validates the whole document before returning; `base` resolves
  /// "model_file" references.
  static ExperimentConfig from_json(const nlohmann::json& j, const std::filesystem::path& base = ".");
  static ExperimentConfig load(const std::filesystem::path& file);

  /// FNV-1a 64 of the canonical JSON, as 16 hex digits.
  std::string hash() const;
};

std::uint64_t fnv1a64(const std::string& bytes);

struct LedgerRow {
  std::string timestamp;
  std::string benchmark;
  std::string operation;
  std::uint64_t seed = 0;
  double estimate = 0.0;
  double stderr_ = 0.0;
  double runtime_s = 0.0;
  std::string config_hash;
};

/// Append-only CSV (timestamp, benchmark, operation, seed, estimate, stderr,
/// runtime_s, config_hash); the header is written when the file is new.
class ResultsLedger {
 public:
  explicit ResultsLedger(std::filesystem::path file) : file_(std::move(file)) {}
  void append(const LedgerRow& row) const;
  std::vector<LedgerRow> read() const;
  const std::filesystem::path& path() const { return file_; }

  static std::string header();
  static std::string now_utc();

 private:
  std::filesystem::path file_;
};

/// Tidy plot tables. kind: "tauberian" (beta, beta_v, stderr),
/// "cesaro" (T, v_over_T, stderr), "contraction" (t, gap, envelope).
/// `results` is the JSON written by the matching subcommand; a null or empty
/// document yields the header only.
std::string emit_plot_data(const nlohmann::json& results, const std::string& kind);

}  // namespace mfergodic

#pragma once

#include <stdexcept>
#include <string>

namespace mfergodic {

/// Invalid or incomplete configuration. Messages name the offending key.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A user-supplied model evaluator was given without its Lipschitz constants.
class MissingConstantsError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Numerical failure during simulation or estimation.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A particle left the finite region |x| <= 1e8.
class BlowUpError : public NumericalError {
 public:
  BlowUpError(std::size_t particle, double time, double value)
      : NumericalError("blow-up: particle " + std::to_string(particle) + " at t=" +
                       std::to_string(time) + " reached " + std::to_string(value)),
        particle_(particle),
        time_(time) {}

  std::size_t particle() const { return particle_; }
  double time() const { return time_; }

 private:
  std::size_t particle_;
  double time_;
};

class OptimizerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mfergodic

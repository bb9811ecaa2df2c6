#pragma once

#include <cmath>
#include <span>
#include <vector>

namespace mfergodic {

/// A Monte Carlo estimate with its normal-approximation standard error.
struct Estimate {
  double value = 0.0;
  double std_err = 0.0;
};

/// Sample mean and standard error (sd / sqrt(n)) of independent replica values.
inline Estimate mean_and_stderr(std::span<const double> samples) {
  Estimate e;
  if (samples.empty()) return e;
  double sum = 0.0;
  for (double s : samples) sum += s;
  e.value = sum / static_cast<double>(samples.size());
  if (samples.size() < 2) return e;
  double ss = 0.0;
  for (double s : samples) ss += (s - e.value) * (s - e.value);
  e.std_err = std::sqrt(ss / static_cast<double>(samples.size() - 1) /
                        static_cast<double>(samples.size()));
  return e;
}

inline Estimate mean_and_stderr(const std::vector<double>& samples) {
  return mean_and_stderr(std::span<const double>(samples));
}

/// Combined standard error of a difference or sum of independent estimates.
inline double combined_stderr(const Estimate& a, const Estimate& b) {
  return std::hypot(a.std_err, b.std_err);
}

}  // namespace mfergodic

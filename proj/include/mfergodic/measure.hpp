#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace mfergodic {

/// Moments of an empirical measure: everything the affine model family and
/// the feedback policies read from the law of the state.
struct MeasureSummary {
  std::vector<double> mean;     // per coordinate
  double second_moment = 0.0;   // E|X|^2

  /// sqrt(E|X - m|^2), clamped at zero against rounding.
  double sd() const {
    double m2 = 0.0;
    for (double m : mean) m2 += m * m;
    return std::sqrt(std::max(0.0, second_moment - m2));
  }
};

/// Non-owning view of N equal-weight points in R^d (row-major N x d).
class EmpiricalMeasure {
 public:
  EmpiricalMeasure(std::span<const double> points, std::size_t dim)
      : points_(points), dim_(dim) {}

  std::size_t size() const { return dim_ == 0 ? 0 : points_.size() / dim_; }
  std::size_t dim() const { return dim_; }
  std::span<const double> points() const { return points_; }
  std::span<const double> point(std::size_t i) const { return points_.subspan(i * dim_, dim_); }

  MeasureSummary summary() const {
    MeasureSummary s;
    s.mean.assign(dim_, 0.0);
    const std::size_t n = size();
    double m2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < dim_; ++k) {
        const double v = points_[i * dim_ + k];
        s.mean[k] += v;
        m2 += v * v;
      }
    }
    for (double& m : s.mean) m /= static_cast<double>(n);
    s.second_moment = m2 / static_cast<double>(n);
    return s;
  }

 private:
  std::span<const double> points_;
  std::size_t dim_;
};

}  // namespace mfergodic

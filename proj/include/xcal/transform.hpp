#pragma once

#include "xcal/types.hpp"

#include <span>
#include <vector>

namespace xcal {

/// Standard normal CDF.
double normal_cdf(double z);
/// Standard normal quantile. Rational initial guess refined by one Halley step.
double normal_quantile(double p);

/// Rank-based map between a physical scale and standard-normal scores.
///
/// The fit stores empirical quantiles at `n_q` evenly spaced probability levels.
/// `forward` interpolates a value's rank on those quantiles (ties take the middle
/// of the tied probability range), clips the rank to [p_min, 1 - p_min] and applies
/// the normal quantile. `inverse` runs the same map backwards.
class QuantileTransform {
 public:
  static constexpr double kRankClip = 1e-7;
  // Scores at or beyond this magnitude map to the fitted range endpoints.
  static constexpr double kScoreGuard = 8.0;

  QuantileTransform() = default;

  /// n_quantiles = 0 selects min(1000, values.size()).
  static QuantileTransform fit(std::span<const double> values, std::size_t n_quantiles = 0);
  static QuantileTransform fit(const Vector& values, std::size_t n_quantiles = 0);
  /// Rebuilds a persisted transform; throws InvalidConfig on malformed arrays.
  static QuantileTransform from_arrays(std::vector<double> probe_points, std::vector<double> reference_quantiles);

  /// Interpolated rank in [0, 1]; values outside the fitted range clip to 0 or 1.
  double rank(double x) const;
  double forward(double x) const;
  double inverse(double z) const;

  /// Probability level -> physical value by interpolation on the stored quantiles.
  double quantile_at(double p) const;

  template <typename Derived>
  auto forward(const Eigen::DenseBase<Derived>& x) const {
    return x.derived().unaryExpr([this](double v) { return forward(v); });
  }
  template <typename Derived>
  auto inverse(const Eigen::DenseBase<Derived>& z) const {
    return z.derived().unaryExpr([this](double v) { return inverse(v); });
  }

  std::size_t size() const { return quantiles_.size(); }
  const std::vector<double>& probe_points() const { return probes_; }
  const std::vector<double>& reference_quantiles() const { return quantiles_; }
  double min() const { return quantiles_.front(); }
  double max() const { return quantiles_.back(); }

 private:
  std::vector<double> probes_;
  std::vector<double> quantiles_;
};

}  // namespace xcal

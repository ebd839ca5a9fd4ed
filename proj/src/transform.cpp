#include "xcal/transform.hpp"

#include "xcal/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace xcal {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double normal_quantile(double p) {
  if (!(p > 0.0)) return -std::numeric_limits<double>::infinity();
  if (!(p < 1.0)) return std::numeric_limits<double>::infinity();

  // Acklam's rational approximation, |rel err| < 1.15e-9 before refinement.
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }

  // Halley step on Phi(x) - p. Upper tail works on the complement to keep precision.
  const double e = (x > 0.0) ? (1.0 - p) - 0.5 * std::erfc(x / std::numbers::sqrt2)
                             : 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

QuantileTransform QuantileTransform::fit(const Vector& values, std::size_t n_quantiles) {
  return fit(std::span<const double>(values.data(), static_cast<std::size_t>(values.size())), n_quantiles);
}

QuantileTransform QuantileTransform::fit(std::span<const double> values, std::size_t n_quantiles) {
  if (values.size() < 2) throw Error(ErrorCode::TooFewValues, "quantile transform needs at least two values");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw Error(ErrorCode::NonFiniteValue, "non-finite value at index " + std::to_string(i), static_cast<long>(i));
    }
  }
  if (n_quantiles == 0) n_quantiles = std::min<std::size_t>(1000, values.size());
  if (n_quantiles < 2 || n_quantiles > values.size()) {
    throw Error(ErrorCode::TooFewValues, "n_quantiles must lie in [2, number of values]");
  }
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());

  QuantileTransform t;
  t.probes_.resize(n_quantiles);
  t.quantiles_.resize(n_quantiles);
  const double denom = static_cast<double>(n_quantiles - 1);
  for (std::size_t k = 0; k < n_quantiles; ++k) {
    t.probes_[k] = static_cast<double>(k) / denom;
    t.quantiles_[k] = stats::quantile_sorted<double>(sorted, t.probes_[k]);
  }
  // Interpolation can break monotonicity by an ulp on near-equal neighbours.
  for (std::size_t k = 1; k < n_quantiles; ++k) t.quantiles_[k] = std::max(t.quantiles_[k], t.quantiles_[k - 1]);
  return t;
}

QuantileTransform QuantileTransform::from_arrays(std::vector<double> probe_points,
                                                 std::vector<double> reference_quantiles) {
  if (probe_points.size() != reference_quantiles.size() || probe_points.size() < 2) {
    throw Error(ErrorCode::InvalidConfig, "transform arrays must have equal length >= 2");
  }
  for (std::size_t k = 0; k < probe_points.size(); ++k) {
    if (!std::isfinite(probe_points[k]) || !std::isfinite(reference_quantiles[k])) {
      throw Error(ErrorCode::InvalidConfig, "transform arrays contain non-finite values");
    }
    if (k > 0 && (probe_points[k] <= probe_points[k - 1] || reference_quantiles[k] < reference_quantiles[k - 1])) {
      throw Error(ErrorCode::InvalidConfig, "transform arrays are not sorted");
    }
  }
  if (probe_points.front() != 0.0 || probe_points.back() != 1.0) {
    throw Error(ErrorCode::InvalidConfig, "probe points must span [0, 1]");
  }
  QuantileTransform t;
  t.probes_ = std::move(probe_points);
  t.quantiles_ = std::move(reference_quantiles);
  return t;
}

double QuantileTransform::rank(double x) const {
  const auto& q = quantiles_;
  if (x < q.front()) return 0.0;
  if (x > q.back()) return 1.0;
  const auto lo = std::lower_bound(q.begin(), q.end(), x);
  const auto hi = std::upper_bound(lo, q.end(), x);
  const auto i_lo = static_cast<std::size_t>(lo - q.begin());
  if (lo != hi) {
    // x equals stored quantiles i_lo .. i_hi - 1: mid-rank over the tie.
    const auto i_last = static_cast<std::size_t>(hi - q.begin()) - 1;
    return 0.5 * (probes_[i_lo] + probes_[i_last]);
  }
  // q[i_lo - 1] < x < q[i_lo]; the range checks guarantee 0 < i_lo < size.
  const double x0 = q[i_lo - 1];
  const double x1 = q[i_lo];
  const double frac = (x - x0) / (x1 - x0);
  return probes_[i_lo - 1] + frac * (probes_[i_lo] - probes_[i_lo - 1]);
}

double QuantileTransform::forward(double x) const {
  const double r = std::clamp(rank(x), kRankClip, 1.0 - kRankClip);
  return normal_quantile(r);
}

double QuantileTransform::quantile_at(double p) const {
  p = std::clamp(p, 0.0, 1.0);
  const auto it = std::upper_bound(probes_.begin(), probes_.end(), p);
  if (it == probes_.end()) return quantiles_.back();
  const auto i = static_cast<std::size_t>(it - probes_.begin());
  const double p0 = probes_[i - 1];
  const double p1 = probes_[i];
  const double frac = (p - p0) / (p1 - p0);
  if (frac == 0.0) return quantiles_[i - 1];
  return quantiles_[i - 1] + frac * (quantiles_[i] - quantiles_[i - 1]);
}

double QuantileTransform::inverse(double z) const {
  if (z >= kScoreGuard) return quantiles_.back();
  if (z <= -kScoreGuard) return quantiles_.front();
  return quantile_at(normal_cdf(z));
}

}  // namespace xcal

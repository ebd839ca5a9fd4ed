#pragma once

#include "xcal/types.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <vector>

namespace xcal::stats {

template <typename Derived>
std::vector<typename Derived::Scalar> sorted_copy(const Eigen::DenseBase<Derived>& values) {
  std::vector<typename Derived::Scalar> out(static_cast<std::size_t>(values.size()));
  for (Eigen::Index i = 0; i < values.size(); ++i) out[static_cast<std::size_t>(i)] = values(i);
  std::sort(out.begin(), out.end());
  return out;
}

/// Linear interpolation between order statistics at position q * (n - 1).
template <typename Scalar>
Scalar quantile_sorted(std::span<const Scalar> sorted, Scalar q) {
  if (sorted.empty()) throw Error(ErrorCode::EmptySample, "quantile of an empty sample");
  if (!(q >= Scalar(0) && q <= Scalar(1))) throw Error(ErrorCode::QOutOfRange, "quantile level outside [0, 1]");
  const Scalar pos = q * static_cast<Scalar>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  if (lo + 1 >= sorted.size()) return sorted.back();
  const Scalar frac = pos - static_cast<Scalar>(lo);
  if (frac == Scalar(0)) return sorted[lo];
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

template <typename Derived>
typename Derived::Scalar quantile(const Eigen::DenseBase<Derived>& values, typename Derived::Scalar q) {
  using Scalar = typename Derived::Scalar;
  if (values.size() == 0) throw Error(ErrorCode::EmptySample, "quantile of an empty sample");
  const auto sorted = sorted_copy(values);
  return quantile_sorted<Scalar>(std::span<const Scalar>(sorted), q);
}

/// Right-continuous empirical CDF.
template <typename Scalar>
class Ecdf {
 public:
  template <typename Derived>
  explicit Ecdf(const Eigen::DenseBase<Derived>& values) : sorted_(sorted_copy(values)) {
    if (sorted_.empty()) throw Error(ErrorCode::EmptySample, "ECDF of an empty sample");
  }

  /// Fraction of the sample that is <= t.
  Scalar operator()(Scalar t) const {
    const auto count = std::upper_bound(sorted_.begin(), sorted_.end(), t) - sorted_.begin();
    return static_cast<Scalar>(count) / static_cast<Scalar>(sorted_.size());
  }

  std::size_t size() const { return sorted_.size(); }
  std::span<const Scalar> sorted_values() const { return sorted_; }

 private:
  std::vector<Scalar> sorted_;
};

/// Two-sample KS distance sup_t |F_a(t) - F_b(t)| for already sorted samples.
/// A single merge pass; both ECDFs are evaluated after consuming every copy of
/// each distinct value, which is where the supremum of a step difference sits.
/// The difference is kept as the integer |i m - j n| over n m, so the result is
/// the correctly rounded rational.
template <typename Scalar>
Scalar ks_statistic_sorted(std::span<const Scalar> a, std::span<const Scalar> b) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::EmptySample, "KS statistic needs two non-empty samples");
  const auto n = static_cast<long long>(a.size());
  const auto m = static_cast<long long>(b.size());
  std::size_t i = 0;
  std::size_t j = 0;
  long long best = 0;
  while (i < a.size() || j < b.size()) {
    Scalar t;
    if (j >= b.size() || (i < a.size() && a[i] <= b[j])) {
      t = a[i];
    } else {
      t = b[j];
    }
    while (i < a.size() && a[i] <= t) ++i;
    while (j < b.size() && b[j] <= t) ++j;
    const long long diff = static_cast<long long>(i) * m - static_cast<long long>(j) * n;
    best = std::max(best, diff < 0 ? -diff : diff);
  }
  return static_cast<Scalar>(best) / static_cast<Scalar>(n * m);
}

template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar ks_statistic(const Eigen::DenseBase<DerivedA>& a, const Eigen::DenseBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  if (a.size() == 0 || b.size() == 0) throw Error(ErrorCode::EmptySample, "KS statistic needs two non-empty samples");
  if (!a.derived().allFinite() || !b.derived().allFinite()) {
    throw Error(ErrorCode::NonFiniteValue, "KS statistic of non-finite samples");
  }
  const auto sa = sorted_copy(a);
  const auto sb = sorted_copy(b);
  return ks_statistic_sorted<Scalar>(std::span<const Scalar>(sa), std::span<const Scalar>(sb));
}

template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar rmse(const Eigen::DenseBase<DerivedA>& y, const Eigen::DenseBase<DerivedB>& yhat) {
  if (y.size() != yhat.size()) throw Error(ErrorCode::DimensionMismatch, "rmse of vectors with different lengths");
  if (y.size() == 0) throw Error(ErrorCode::EmptySample, "rmse of an empty sample");
  return std::sqrt((y.derived().array() - yhat.derived().array()).square().mean());
}

struct ErrorPercentile {
  double level;  // in percent
  double value;
};

inline constexpr std::array<double, 3> kDefaultErrorLevels{90.0, 95.0, 98.0};

template <typename DerivedA, typename DerivedB>
std::vector<ErrorPercentile> abs_error_percentiles(const Eigen::DenseBase<DerivedA>& y,
                                                   const Eigen::DenseBase<DerivedB>& yhat,
                                                   std::span<const double> levels = kDefaultErrorLevels) {
  if (y.size() != yhat.size()) throw Error(ErrorCode::DimensionMismatch, "error percentiles of unequal lengths");
  if (y.size() == 0) throw Error(ErrorCode::EmptySample, "error percentiles of an empty sample");
  const Vector err = (y.derived().array() - yhat.derived().array()).abs().matrix().template cast<double>();
  const auto sorted = sorted_copy(err);
  std::vector<ErrorPercentile> out;
  for (double level : levels) out.push_back({level, quantile_sorted<double>(sorted, level / 100.0)});
  return out;
}

/// Rectangle-rule running integral: c_k = dt * sum_{j <= k} v_j.
template <typename Derived>
VectorX<typename Derived::Scalar> cumulative_series(const Eigen::DenseBase<Derived>& values,
                                                     typename Derived::Scalar dt) {
  using Scalar = typename Derived::Scalar;
  if (values.size() == 0) throw Error(ErrorCode::EmptySample, "cumulative series of an empty sample");
  VectorX<Scalar> out(values.size());
  Scalar sum = Scalar(0);
  for (Eigen::Index k = 0; k < values.size(); ++k) {
    sum += values(k);
    out(k) = dt * sum;
  }
  return out;
}

}  // namespace xcal::stats

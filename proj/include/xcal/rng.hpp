#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace xcal {

/// SplitMix64 finalizer: a bijective 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based generator: output i is mix64(key + (i + 1) * golden gamma).
/// A stream is fully determined by its key, so a draw indexed substream can be
/// regenerated on any thread in any order.
class CounterRng {
 public:
  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

  explicit constexpr CounterRng(std::uint64_t key) : key_(key) {}

  /// Key for substream `index` of stream `stream` under `seed`.
  static constexpr CounterRng substream(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    return CounterRng(mix64(mix64(seed ^ mix64(stream + kGamma)) + index * kGamma + 1));
  }

  constexpr std::uint64_t next_u64() {
    ++counter_;
    return mix64(key_ + counter_ * kGamma);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; the spare deviate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 == 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(angle);
    has_spare_ = true;
    return r * std::cos(angle);
  }

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace xcal

#pragma once

#include <cmath>
#include <cstdint>

#include "lqgame/linalg.hpp"

namespace lqgame {

/// Counter-seeded splitmix64 stream. Episode i of a batch draws from an
/// independent stream seeded by mix_seed(base, i), which makes runs
/// reproducible and embarrassingly parallel: the draw sequence of one
/// episode never depends on how many episodes ran before it.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform in (0, 1]; never returns 0 so log() is safe.
  double uniform01() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

  /// Standard normal via Box-Muller. Each call consumes exactly two
  /// uniforms, keeping the draw sequence independent of call sites.
  double normal() {
    const double u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  Vector normal_vector(int n) {
    Vector v(n);
    for (int i = 0; i < n; ++i) v(i) = normal();
    return v;
  }

 private:
  uint64_t state_;
};

/// Derive a per-episode seed from a base seed; splitmix-style mixing of
/// both words so neighbouring episodes get uncorrelated streams.
inline uint64_t mix_seed(uint64_t base, uint64_t index) {
  uint64_t z = base + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Draws x ~ N(mean, cov) as mean + C * iid-normals with C the symmetric
/// PSD square root, precomputed once per covariance.
class GaussianSampler {
 public:
  GaussianSampler() = default;
  explicit GaussianSampler(const Matrix& cov) : chol_(psd_sqrt(cov)) {}

  Vector draw(Rng& rng) const { return chol_ * rng.normal_vector(static_cast<int>(chol_.cols())); }

  const Matrix& factor() const { return chol_; }

 private:
  Matrix chol_;
};

}  // namespace lqgame

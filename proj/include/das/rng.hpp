#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>

#include <Eigen/Dense>

namespace das {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent stream seed from a master seed and a stream id.
inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

/// Seeded engine with a standard-normal helper. Every random draw in the
/// library goes through one of these so results are reproducible per stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, std::uint64_t stream) : engine_(stream_seed(seed, stream)) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  /// Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
  }

  Eigen::VectorXd normal_vector(Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// Counter-based standard normal: the value at `index` depends only on
/// (seed, index), so any block of a large random matrix can be regenerated
/// without touching the rest.
inline double counter_normal(std::uint64_t seed, std::uint64_t index) {
  const std::uint64_t pair = index >> 1;
  const std::uint64_t a = splitmix64(seed ^ splitmix64(2 * pair));
  const std::uint64_t b = splitmix64(seed ^ splitmix64(2 * pair + 1));
  // u1 in (0, 1], u2 in [0, 1)
  const double u1 = (static_cast<double>(a >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  return (index & 1) ? radius * std::sin(angle) : radius * std::cos(angle);
}

/// Fills out[0..count) with counter_normal(seed, first + i), computing both
/// values of each Box-Muller pair once.
inline void counter_normals(std::uint64_t seed, std::uint64_t first, std::size_t count, double* out) {
  std::size_t i = 0;
  if (count > 0 && (first & 1)) {
    out[i++] = counter_normal(seed, first);
  }
  for (; i + 1 < count; i += 2) {
    const std::uint64_t pair = (first + i) >> 1;
    const std::uint64_t a = splitmix64(seed ^ splitmix64(2 * pair));
    const std::uint64_t b = splitmix64(seed ^ splitmix64(2 * pair + 1));
    const double u1 = (static_cast<double>(a >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    out[i] = radius * std::cos(angle);
    out[i + 1] = radius * std::sin(angle);
  }
  if (i < count) out[i] = counter_normal(seed, first + i);
}

}  // namespace das

#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace meanflowq {

// splitmix64 step; used to derive independent substream seeds from a master
// seed without correlating nearby counters.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for substream `index` of stream `master`.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64(master ^ splitmix64(index));
}

/// Uniform double in [0,1) from the top 53 bits of the generator output.
/// Avoids std::uniform_real_distribution so that draws are identical across
/// standard library implementations.
inline double u01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Inverse-CDF draw from a finite pmf given as a row of weights summing to 1.
template <typename Derived>
int sample_categorical(std::mt19937_64& rng, const Eigen::MatrixBase<Derived>& weights) {
  const double u = u01(rng);
  double acc = 0.0;
  const int n = static_cast<int>(weights.size());
  for (int i = 0; i < n; ++i) {
    acc += weights(i);
    if (u < acc) return i;
  }
  return n - 1;  // guard against round-off in the final bin
}

/// Standard normal via Box-Muller on the deterministic u01 stream.
inline double gaussian(std::mt19937_64& rng) {
  double u1 = u01(rng);
  while (u1 <= 0.0) u1 = u01(rng);
  const double u2 = u01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

/// Uniform point on the sphere of given radius in R^d.
inline Eigen::VectorXd sphere_point(std::mt19937_64& rng, int dim, double radius) {
  Eigen::VectorXd v(dim);
  do {
    for (int i = 0; i < dim; ++i) v(i) = gaussian(rng);
  } while (v.norm() < 1e-12);
  return radius * v / v.norm();
}

}  // namespace meanflowq

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

namespace mosa {

/// splitmix64 finalizer applied to `state + 0x9E3779B97F4A7C15`; advances state.
std::uint64_t splitmix64(std::uint64_t& state);

/// Seed for an independent child stream: splitmix64 of (seed ^ splitmix64(stream)).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Deterministic random source.
///
/// Engine is std::mt19937_64 (bit stream fixed by the C++ standard and shared
/// with numpy's MT19937-64 reference), seeded directly with the 64-bit seed.
/// All derived draws are computed here rather than through <random>
/// distributions, whose output is implementation-defined:
///   uniform()  = (next_u64() >> 11) * 2^-53, in [0, 1)
///   below(n)   = rejection sampling on next_u64() against the largest
///                multiple of n
///   normal()   = Box-Muller, sqrt(-2 ln(1-u1)) * cos(2 pi u2), one draw pair
///                per sample (no cached second value)
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }
  double uniform();
  std::uint64_t below(std::uint64_t n);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Child generator for `stream`; does not advance this generator.
  Rng split(std::uint64_t stream) const { return Rng(derive_seed(seed_, stream)); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace mosa

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace seqmech {

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view s);

/// Seeded generator with named sub-streams.
///
/// `derive(name)` yields a stream that depends only on (seed, name), so adding
/// or removing a layer never shifts the draws of another one.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(splitmix64(seed)) {}

  std::uint64_t seed() const { return seed_; }
  Rng derive(std::string_view name) const { return Rng(splitmix64(seed_ ^ fnv1a64(name))); }

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  bool bernoulli(double p) { return uniform(0.0, 1.0) < p; }
  std::uint64_t next() { return engine_(); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace seqmech

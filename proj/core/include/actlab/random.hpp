#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace actlab {

// The standard distributions are implementation-defined, so draws are built
// directly on mt19937_64 bits to keep results identical across toolchains.
using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);

/// Stable 64-bit hash combining; used for per-run seed derivation.
class SeedHasher {
 public:
  explicit SeedHasher(std::uint64_t seed) : state_(splitmix64(seed ^ 0x6a09e667f3bcc909ULL)) {}
  SeedHasher& add(std::uint64_t v);
  SeedHasher& add(double v);
  SeedHasher& add(std::string_view s);
  std::uint64_t value() const { return splitmix64(state_); }

 private:
  std::uint64_t state_;
};

/// Child seed for a named stream of a parent seed.
std::uint64_t derive_seed(std::uint64_t parent, std::string_view stream, std::uint64_t index = 0);

/// Uniform integer in [0, bound), unbiased.
std::uint64_t uniform_index(Rng& rng, std::uint64_t bound);
/// Uniform double in [0, 1) with 53 random bits.
double uniform_unit(Rng& rng);
/// Standard normal draw (Box-Muller, one value per call).
double standard_normal(Rng& rng);

/// k distinct indices from [0, n), uniformly without replacement, in draw order.
std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t n, std::size_t k);

}  // namespace actlab

#pragma once

#include <cstdint>
#include <random>
#include <set>
#include <vector>

namespace pmt2i {

/// Seeded generator whose output is identical on every platform.
/// std::mt19937_64 is fully specified by the standard; the distributions are
/// not, so integer ranges are mapped here instead of through
/// std::uniform_int_distribution.
class DeterministicRng {
 public:
  explicit DeterministicRng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t uniform_below(std::uint64_t bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const std::uint64_t r = engine_();
      if (r >= threshold) return r % bound;
    }
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

 private:
  std::mt19937_64 engine_;
};

/// k distinct values drawn uniformly from [0, population), ascending.
/// Floyd's algorithm: O(k log k) regardless of population size.
inline std::vector<std::uint64_t> sample_distinct(std::uint64_t population,
                                                  std::uint64_t k,
                                                  std::uint64_t seed) {
  if (k > population) k = population;
  DeterministicRng rng(seed);
  std::set<std::uint64_t> chosen;
  for (std::uint64_t j = population - k; j < population; ++j) {
    const std::uint64_t t = rng.uniform_below(j + 1);
    if (!chosen.insert(t).second) chosen.insert(j);
  }
  return {chosen.begin(), chosen.end()};
}

}  // namespace pmt2i

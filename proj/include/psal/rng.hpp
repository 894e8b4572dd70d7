#ifndef PSAL_RNG_HPP
#define PSAL_RNG_HPP

#include <cstdint>

namespace psal {

/// Counter-based SplitMix64 generator.
///
/// The whole state is (seed, counter), so it serializes into two integers and
/// produces the same sequence on every platform. Distributions are computed
/// here rather than through <random> because the standard distributions are
/// implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {}
  Rng(std::uint64_t seed, std::uint64_t counter) : seed_(seed), counter_(counter) {}

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller (one draw consumed per call pair is not cached).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Independent stream derived from this generator's seed and a tag.
  Rng fork(std::uint64_t tag) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  friend bool operator==(const Rng&, const Rng&) = default;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

}  // namespace psal

#endif  // PSAL_RNG_HPP

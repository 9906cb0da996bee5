#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>

namespace hybrid {

/// Seeded generator that can be split into named, independent substreams.
///
/// A substream depends only on the parent's seed and the name, never on how
/// many values the parent has already produced, so every stochastic site
/// (init, dropout, sampling, shuffling) is reproducible on its own.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 42);

  Rng substream(std::string_view name) const;
  Rng substream(std::string_view name, std::uint64_t index) const;

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }
  double normal();

  template <class T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace hybrid

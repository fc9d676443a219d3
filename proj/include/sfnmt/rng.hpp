#pragma once

#include <cstdint>

// Counter-based randomness: every random decision in the toolkit is a pure
// function of structured indices (seed, epoch, sentence, word, ...), so
// results do not depend on scheduling or thread count.

namespace sfnmt::rng {

// SplitMix64 finalizer (Steele et al.), full avalanche.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Absorb one counter word into a running hash state.
constexpr std::uint64_t combine(std::uint64_t h, std::uint64_t v) noexcept {
  return mix64(h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)));
}

constexpr std::uint64_t hash2(std::uint64_t a, std::uint64_t b) noexcept {
  return combine(mix64(a), b);
}
constexpr std::uint64_t hash3(std::uint64_t a, std::uint64_t b, std::uint64_t c) noexcept {
  return combine(hash2(a, b), c);
}
constexpr std::uint64_t hash4(std::uint64_t a, std::uint64_t b, std::uint64_t c,
                              std::uint64_t d) noexcept {
  return combine(hash3(a, b, c), d);
}

// Map a 64-bit word to [0, 1) with 53-bit resolution.
constexpr double to_unit(std::uint64_t u) noexcept {
  return static_cast<double>(u >> 11) * 0x1.0p-53;
}

// Sequential SplitMix64 stream for shuffles and weight init.
class Stream {
 public:
  explicit Stream(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  double uniform() noexcept { return to_unit(next()); }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next()) * n) >> 64);
  }

  template <class RandomIt>
  void shuffle(RandomIt first, RandomIt last) noexcept {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const auto j = below(i);
      using std::swap;
      swap(first[i - 1], first[j]);
    }
  }

 private:
  std::uint64_t state_;
};

}  // namespace sfnmt::rng

#pragma once

// Self-contained deterministic RNG (xoshiro256++ seeded via splitmix64).
// Everything random in the library goes through this class instead of the
// std distributions, so corpora, plans and parameter inits are reproducible
// bit-for-bit per seed regardless of the standard library build.

#include <cstdint>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace contrastlab {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed) {
    std::uint64_t x = seed;
    for (auto& word : state_) {
      x = splitmix64(x);
      word = x;
    }
  }

  // Independent child stream; children with distinct tags never collide.
  Rng stream(std::uint64_t tag) const {
    return Rng(splitmix64(seed_ ^ (0xa0761d6478bd642fULL * (tag + 1))));
  }

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform double in [0, 1).
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). Debiased multiply-shift (Lemire).
  std::int64_t next_below(std::int64_t n) {
    if (n <= 0) throw std::invalid_argument("Rng::next_below: n must be positive");
    const std::uint64_t range = static_cast<std::uint64_t>(n);
    std::uint64_t x = next_u64();
    __uint128_t m = static_cast<__uint128_t>(x) * range;
    std::uint64_t low = static_cast<std::uint64_t>(m);
    if (low < range) {
      const std::uint64_t threshold = (0ULL - range) % range;
      while (low < threshold) {
        x = next_u64();
        m = static_cast<__uint128_t>(x) * range;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::int64_t>(m >> 64);
  }

  // Standard normal via Box-Muller (cosine branch only).
  double next_gaussian() {
    const double u1 = 1.0 - next_unit();  // (0, 1]
    const double u2 = next_unit();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(next_below(static_cast<std::int64_t>(i)));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t state_[4];
  std::uint64_t seed_;
};

}  // namespace contrastlab

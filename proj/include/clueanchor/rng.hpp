#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace clueanchor {

// Deterministic RNG used for every sampling decision in the pipeline.
// splitmix64 is small, fast, and fully specified, so equal seeds give
// equal streams on every platform and across process runs.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, n). Rejection keeps the draw unbiased.
  std::uint64_t next_below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = next();
    while (v >= limit) v = next();
    return v % n;
  }

  // Uniform in [0, 1).
  double next_unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t state_;
};

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Order-sensitive combine for deriving sub-seeds (per item, per stage).
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  SplitMix64 rng(a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
  return rng.next();
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  return mix_seed(seed, fnv1a64(tag));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return mix_seed(seed, index);
}

// First k positions of a seeded Fisher-Yates shuffle of [0, n).
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k,
                                                           SplitMix64& rng) {
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  if (k > n) k = n;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.next_below(n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace clueanchor

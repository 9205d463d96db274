#ifndef KBM_RNG_HPP
#define KBM_RNG_HPP

#include <cstdint>
#include <random>

namespace kbm {

using Rng = std::mt19937_64;

/// splitmix64 increment (odd, so index -> root + (index+1)*gamma is a bijection mod 2^64).
inline constexpr std::uint64_t kSplitMixGamma = 0x9E3779B97F4A7C15ULL;

/// splitmix64 output finalizer; a bijection on 64-bit words.
constexpr std::uint64_t splitmix64_mix(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Seed of the stream used by replica `index` under experiment seed `root`.
///
/// Equals the (index+1)-th output of a splitmix64 generator whose state
/// starts at `root`, so (0, 0) maps to 0xE220A8397B1DCDAF. Injective in
/// `index` for a fixed root and independent of the order replicas run in.
constexpr std::uint64_t derive_stream_seed(std::uint64_t root, std::uint64_t index) noexcept {
  return splitmix64_mix(root + (index + 1) * kSplitMixGamma);
}

inline Rng make_stream(std::uint64_t root, std::uint64_t index) {
  return Rng(derive_stream_seed(root, index));
}

}  // namespace kbm

#endif

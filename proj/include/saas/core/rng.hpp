#pragma once

#include <cstdint>
#include <random>

namespace saas {

/// Independent generator for (seed, stream); streams never share state, so work
/// split by stream is reproducible regardless of execution order.
inline std::mt19937_64 derive_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x5aa5u};
  return std::mt19937_64(seq);
}

/// Uniform integer in [0, n) without relying on library distribution internals.
inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  return static_cast<std::size_t>(rng() % n);
}

inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace saas

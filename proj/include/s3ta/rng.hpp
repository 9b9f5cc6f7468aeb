#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace s3ta {

using Rng = std::mt19937_64;

/// Derives an independent 64-bit seed from a base seed and a list of stream
/// coordinates (image index, restart index, ...). SplitMix64 finalizer.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> coords);

inline Rng make_rng(std::uint64_t base, std::initializer_list<std::uint64_t> coords) {
  return Rng(derive_seed(base, coords));
}

/// +1 or -1 with equal probability.
inline double rademacher(Rng& rng) { return (rng() >> 63) ? 1.0 : -1.0; }

}  // namespace s3ta

#pragma once

#include <cstdint>
#include <random>

namespace protolearn {

// Independent generator streams from one user seed, so a simulator and a
// client started with the same seed never draw the same numbers.
enum class Stream : std::uint32_t { client = 1, simulator = 2, equivalence = 3, synthesis = 4, sampling = 5 };

inline std::mt19937_64 make_rng(std::uint64_t seed, Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

} // namespace protolearn

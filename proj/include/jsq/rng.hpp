#pragma once

#include <cstdint>
#include <random>

namespace jsq {

using Rng = std::mt19937_64;

/// Stream splitting rule: replica r of an experiment seeded with s draws from
/// mt19937_64 initialized through seed_seq{lo(s), hi(s), lo(r), hi(r), tag}.
/// `tag` separates unrelated consumers (e.g. micro vs aggregate simulators)
/// that share the same (seed, replica) pair.
inline Rng make_rng(std::uint64_t seed, std::uint64_t replica = 0, std::uint32_t tag = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(replica), static_cast<std::uint32_t>(replica >> 32),
                    tag};
  return Rng(seq);
}

}  // namespace jsq

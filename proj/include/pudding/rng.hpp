#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "pudding/hash.hpp"

namespace pudding {

// One user-facing seed fans out into named sub-streams (e.g. "search",
// "train", "split") so changing one pipeline stage does not perturb the
// randomness of another.
inline std::mt19937_64 seeded_rng(std::uint64_t seed, std::string_view stream) {
  std::uint64_t h = fnv1a64(stream.data(), stream.size(), seed ^ 0x9e3779b97f4a7c15ull);
  return std::mt19937_64(h);
}

}  // namespace pudding

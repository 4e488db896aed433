#pragma once

#include <cstdint>
#include <random>

namespace ifa {

using Rng = std::mt19937_64;

// Counter-based seed derivation. A child seed depends only on (root, stream,
// index), so work items can be scheduled in any order or on any thread and
// still see the same random stream. The mixer is the splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream,
                                    std::uint64_t index = 0) noexcept {
  return mix64(mix64(mix64(root) ^ stream) ^ index);
}

// Named streams, so that changing one consumer never perturbs another.
namespace streams {
inline constexpr std::uint64_t kItemInit = 1;
inline constexpr std::uint64_t kEncoderInit = 2;
inline constexpr std::uint64_t kTraining = 3;
inline constexpr std::uint64_t kSimulate = 4;
inline constexpr std::uint64_t kHoldout = 5;
inline constexpr std::uint64_t kEvaluation = 6;
inline constexpr std::uint64_t kRotation = 7;
inline constexpr std::uint64_t kReplication = 8;
inline constexpr std::uint64_t kScree = 9;
}  // namespace streams

}  // namespace ifa

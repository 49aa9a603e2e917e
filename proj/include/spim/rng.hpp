#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace spim {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; a bijective 64-bit mix.
std::uint64_t splitmix64(std::uint64_t x);

/// Derives an independent stream seed from a root seed and a path of
/// counters (trial, user, round, ...). Pure function of its arguments, so
/// any worker can reconstruct any stream without coordination.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  return Rng(derive_seed(seed, path));
}

// Stream tags keep substreams of the same counters apart.
namespace stream {
inline constexpr std::uint64_t kChannel = 0x43484e4cULL;
inline constexpr std::uint64_t kAltMin = 0x414c544dULL;
inline constexpr std::uint64_t kDataset = 0x44415441ULL;
inline constexpr std::uint64_t kNoise = 0x4e4f4953ULL;
inline constexpr std::uint64_t kSplit = 0x53504c54ULL;
inline constexpr std::uint64_t kInit = 0x494e4954ULL;
inline constexpr std::uint64_t kMask = 0x4d41534bULL;
inline constexpr std::uint64_t kBatch = 0x42415443ULL;
inline constexpr std::uint64_t kEval = 0x4556414cULL;
inline constexpr std::uint64_t kPattern = 0x50415454ULL;
} // namespace stream

} // namespace spim

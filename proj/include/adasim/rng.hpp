#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace adasim {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent stream seed from a base seed and a tuple of
// coordinates (stream tag, epoch, item, ...). Order of coordinates matters.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> coords) {
  std::uint64_t h = splitmix64(base);
  for (auto c : coords) h = splitmix64(h ^ splitmix64(c + 0x632be59bd9b4e019ULL));
  return h;
}

inline Rng make_rng(std::uint64_t base, std::initializer_list<std::uint64_t> coords) {
  return Rng(derive_seed(base, coords));
}

// Stream tags keep augmentation, pair sampling and shuffling independent.
namespace stream {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kShuffle = 2;
inline constexpr std::uint64_t kAugStudent = 3;
inline constexpr std::uint64_t kAugTeacher = 4;
inline constexpr std::uint64_t kPair = 5;
inline constexpr std::uint64_t kOracle = 6;
inline constexpr std::uint64_t kEpisode = 7;
inline constexpr std::uint64_t kData = 8;
inline constexpr std::uint64_t kProbe = 9;
}  // namespace stream

}  // namespace adasim

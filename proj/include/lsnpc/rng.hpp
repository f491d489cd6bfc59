#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace lsnpc {

using Rng = std::mt19937_64;

/// Mix a base seed with stream identifiers into an independent seed.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index = 0) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ stream) ^ index);
}

inline Rng make_rng(std::uint64_t base, std::uint64_t stream, std::uint64_t index = 0) {
  return Rng(derive_seed(base, stream, index));
}

inline void fill_normal(Rng& rng, std::span<double> out) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& v : out) v = n(rng);
}

inline double draw_chi_squared(Rng& rng, double dof) { return std::chi_squared_distribution<double>(dof)(rng); }

// Stream identifiers for derive_seed; fixed so artifacts stay reproducible.
namespace streams {
inline constexpr std::uint64_t kGenerate = 1;
inline constexpr std::uint64_t kSplit = 2;
inline constexpr std::uint64_t kCorrupt = 3;
inline constexpr std::uint64_t kBaseInit = 4;
inline constexpr std::uint64_t kBaseTrain = 5;
inline constexpr std::uint64_t kModelInit = 6;
inline constexpr std::uint64_t kModelTrain = 7;
inline constexpr std::uint64_t kCorrect = 8;
inline constexpr std::uint64_t kValidation = 9;
inline constexpr std::uint64_t kTheory = 10;
}  // namespace streams

}  // namespace lsnpc

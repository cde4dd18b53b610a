#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace dipg {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Stream tags. Every random consumer draws from its own derived stream so
// that enabling or disabling one consumer never shifts another.
enum class Stream : std::uint64_t {
  init = 1,
  rollout = 2,
  known_samples = 3,
  minibatch = 4,
  evaluation = 5,
  stored = 6,
  batch_generate = 7,
};

inline std::uint64_t derive_seed(std::uint64_t seed,
                                 std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = mix_seed(seed);
  for (auto p : path) s = mix_seed(s ^ mix_seed(p + 0x632be59bd9b4e019ULL));
  return s;
}

inline Rng make_rng(std::uint64_t seed, Stream stream,
                    std::uint64_t index = 0) {
  return Rng(derive_seed(seed, {static_cast<std::uint64_t>(stream), index}));
}

}  // namespace dipg

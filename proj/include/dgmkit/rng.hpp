#pragma once

#include <cstdint>
#include <random>
#include <vector>

// Counter-based stream splitting: every consumer derives its generator
// from (root seed, stream id, epoch), so toggling one consumer or
// resuming from a checkpoint never perturbs the others.

namespace dgmkit {

enum class RngStream : std::uint64_t {
  kInit = 1,
  kRegime = 2,
  kBinarize = 3,
  kZNoise = 4,
  kGumbel = 5,
  kShuffle = 6,
  kGeneration = 7,
  kSynthetic = 8,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::mt19937_64 stream_rng(std::uint64_t seed, RngStream stream,
                                  std::uint64_t epoch = 0) {
  std::uint64_t s = splitmix64(seed);
  s = splitmix64(s ^ static_cast<std::uint64_t>(stream));
  s = splitmix64(s ^ epoch);
  return std::mt19937_64(s);
}

inline std::vector<double> normal_vector(std::mt19937_64& rng, std::size_t n,
                                         double stddev = 1.0) {
  std::normal_distribution<double> d(0.0, stddev);
  std::vector<double> out(n);
  for (double& x : out) x = d(rng);
  return out;
}

// Uniforms in the open interval (0,1), safe to feed into -log(-log u).
inline std::vector<double> open_uniform_vector(std::mt19937_64& rng,
                                               std::size_t n) {
  std::uniform_real_distribution<double> d(1e-12, 1.0 - 1e-12);
  std::vector<double> out(n);
  for (double& x : out) x = d(rng);
  return out;
}

}  // namespace dgmkit

#pragma once

#include <cstdint>
#include <random>

namespace krigseq {

/// All randomness in the library flows from explicit 64-bit seeds. Independent
/// streams (per replicate, per iteration, per cluster-count candidate, ...)
/// are derived from a master seed with the splitmix64 mixer, the documented
/// counter-based expansion promised by the experiment harness.
using Rng = std::mt19937_64;

/// One splitmix64 step: advances `state` and returns the mixed output.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Seed for sub-stream `stream` of `master`. derive_seed(s, a) and
/// derive_seed(s, b) are decorrelated for a != b; nesting is fine.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t state = master;
  (void)splitmix64(state);
  state ^= 0xd1b54a32d192ed03ULL * (stream + 1);
  return splitmix64(state);
}

inline Rng make_rng(std::uint64_t seed) {
  std::uint64_t state = seed;
  // mt19937_64 seeded from a single word has weak low-entropy starts; mix it.
  return Rng(splitmix64(state));
}

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline double normal(Rng& rng, double mean = 0.0, double stddev = 1.0) {
  return std::normal_distribution<double>(mean, stddev)(rng);
}

/// FNV-1a hash of a string, used to pin per-problem fixed test sets.
inline std::uint64_t fnv1a(const char* s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (; *s; ++s) h = (h ^ static_cast<unsigned char>(*s)) * 0x100000001b3ULL;
  return h;
}

}  // namespace krigseq

#pragma once

#include <cstdint>

namespace pdfpm {

// splitmix64 step: advances the state and returns one output word.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Derives a child seed from a master seed and up to two stream indices.
// Used to give every (delta, run) cell of an experiment its own stream
// without any cross-run coupling.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a,
                                 std::uint64_t b = 0) {
  std::uint64_t s = master;
  splitmix64(s);
  s ^= 0xd1b54a32d192ed03ull * (a + 1);
  splitmix64(s);
  s ^= 0x8cb92ba72f3d8dd7ull * (b + 1);
  return splitmix64(s);
}

// Small deterministic generator; identical output on every platform for a
// given seed, which keeps recorded seeds meaningful.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {
    // Decorrelate nearby seeds.
    splitmix64(state_);
  }

  std::uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform01() { return (next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

 private:
  std::uint64_t state_;
};

}  // namespace pdfpm

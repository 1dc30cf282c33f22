#pragma once

// Random streams for the simulator. Every exponential clock owns an
// independent xoshiro256** generator whose state is filled by SplitMix64
// from a key mixed out of (seed, replication, clock id), so replications
// can run in any order and on any thread and still reproduce bit-for-bit.
// Uniforms take the top 53 bits of the output; exponentials use
// -log1p(-u) / rate.

#include <cmath>
#include <cstdint>

namespace jsq {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class ClockStream {
 public:
  ClockStream(std::uint64_t seed, std::uint64_t replication, std::uint64_t clock) {
    std::uint64_t key = seed;
    key = splitmix64(key) ^ replication;
    key = splitmix64(key) ^ clock;
    std::uint64_t sm = splitmix64(key);
    for (auto& w : s_) w = splitmix64(sm);
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform on [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double exponential(double rate) { return -std::log1p(-uniform()) / rate; }

  // Uniform on {0, ..., n-1}, rejection-sampled to avoid modulo bias.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    for (;;) {
      const std::uint64_t r = next();
      if (r < limit) return r % n;
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t s_[4];
};

}  // namespace jsq

#pragma once

#include <cmath>
#include <cstdint>

namespace rtsdoa::core {

// splitmix64: tiny, seedable, identical output on every platform. The whole
// pipeline (scene sampling, parameter init, batch shuffling) draws from this
// so that a (seed, config) pair reproduces bit-identical runs.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive bounds
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(next_u64() % static_cast<uint64_t>(hi - lo + 1));
  }

  double normal() {
    // Box-Muller, no cached spare so the draw count stays predictable.
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Independent stream for (seed, index) pairs, e.g. one per scene.
  static Rng derive(uint64_t seed, uint64_t stream) {
    Rng mix(seed);
    uint64_t a = mix.next_u64();
    Rng mix2(stream ^ 0x6c62272e07bb0142ULL);
    return Rng(a ^ mix2.next_u64());
  }

 private:
  uint64_t state_;
};

}  // namespace rtsdoa::core

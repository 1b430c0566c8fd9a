#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace mtvit {

// Deterministic RNG used everywhere in the project. std::mt19937_64 has a
// fully specified output sequence, and we derive uniforms/normals from raw
// 64-bit draws ourselves because the std distributions are
// implementation-defined and would break byte-identical reproducibility.
class Rng {
public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random mantissa bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  uint64_t uniform_index(uint64_t n) {
    // Rejection-free modulo is fine here: n is tiny compared to 2^64, the
    // bias is far below anything observable in our sample sizes.
    return engine_() % n;
  }

  // Standard normal via Box-Muller. One value per call, deterministic.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Normal(0, std) truncated to [-2 std, 2 std], the usual ViT init.
  double trunc_normal(double stddev) {
    for (;;) {
      const double x = normal();
      if (x >= -2.0 && x <= 2.0) return x * stddev;
    }
  }

  // Derives an independent stream, e.g. one per epoch or per purpose.
  Rng split(uint64_t stream) {
    // SplitMix64 over (state draw, stream id) decorrelates child seeds.
    uint64_t z = engine_() + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return Rng(z ^ (z >> 31));
  }

private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace mtvit

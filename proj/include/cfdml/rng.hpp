#pragma once

#include <cstdint>
#include <cmath>
#include <random>
#include <vector>

namespace cfdml {

// Fixed derivation offsets so that every consumer of the master seed draws
// from its own independent stream.
namespace seed_offset {
inline constexpr std::uint64_t folds = 0x1000;
inline constexpr std::uint64_t repetition = 0x2000;
inline constexpr std::uint64_t learner_outcome = 0x3000;
inline constexpr std::uint64_t learner_treatment = 0x4000;
inline constexpr std::uint64_t vae_init = 0x5000;
inline constexpr std::uint64_t vae_batches = 0x6000;
inline constexpr std::uint64_t vae_noise = 0x7000;
inline constexpr std::uint64_t vae_generate = 0x8000;
inline constexpr std::uint64_t synth = 0x9000;
inline constexpr std::uint64_t grad_check = 0xA000;
inline constexpr std::uint64_t tree = 0xB000;
}  // namespace seed_offset

/// splitmix64 finalizer; used to turn (seed, offset) pairs into stream seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t offset = 0) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (offset + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::uint64_t offset = 0) { return Rng(mix_seed(seed, offset)); }

/// Uniform in [0, 1) built directly from the engine bits so results do not
/// depend on the standard library's distribution implementation.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Standard normal via Box-Muller on uniform01; portable across libstdc++/libc++.
class NormalSampler {
 public:
  double operator()(Rng& rng) {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01(rng);
    while (u1 <= 0.0) u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(angle);
    has_spare_ = true;
    return r * std::cos(angle);
  }

 private:
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Uniform integer in [0, n) by rejection; portable.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x = rng();
  while (x >= limit) x = rng();
  return x % n;
}

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[uniform_index(rng, i)]);
  }
}

}  // namespace cfdml

#pragma once

#include <cmath>
#include <cstdint>

namespace bayeseg {

/// Counter-based generator: every draw is a hash of (key, counter), so a
/// single 64-bit seed splits into independent per-field streams and reruns
/// are reproducible irrespective of draw interleaving.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
      : key_(mix(seed ^ mix(stream + 0x632be59bd9b4e019ull))) {}

  std::uint64_t next_u64() { return mix(key_ + (++counter_) * kGamma); }

  /// Uniform in the open interval (0, 1).
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller; second value of each pair is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ull;

  // splitmix64 finalizer
  static std::uint64_t mix(std::uint64_t z) {
    z += kGamma;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Stream ids for splitting one user seed across the model's random fields.
enum class RngStream : std::uint64_t {
  kContourNoise = 1,
  kBasisNoise = 2,
  kLabelNoise = 3,
  kSceneNoise = 4,
};

inline CounterRng make_rng(std::uint64_t seed, RngStream stream) {
  return CounterRng(seed, static_cast<std::uint64_t>(stream));
}

}  // namespace bayeseg

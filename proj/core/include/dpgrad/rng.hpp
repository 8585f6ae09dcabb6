#ifndef DPGRAD_RNG_HPP_
#define DPGRAD_RNG_HPP_

#include <cstdint>
#include <random>

namespace dpgrad {

// splitmix64 finalizer. Full-avalanche 64-bit mixer; also the substream
// derivation function, so two streams with nearby seeds are unrelated.
inline constexpr uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Stream seed for worker `index` under `master`. All per-teacher and
// per-sample randomness is derived this way, which is what makes results
// independent of the number of threads doing the work.
inline constexpr uint64_t derive_stream(uint64_t master, uint64_t index) {
  return mix64(master ^ index);
}

// Labels for fixed sub-purposes of a master seed, so e.g. the vote streams
// and the noise stream of one round can never collide.
enum class StreamTag : uint64_t {
  kVotes = 0x7600000000000001ULL,
  kNoise = 0x7600000000000002ULL,
  kData = 0x7600000000000003ULL,
  kModel = 0x7600000000000004ULL,
  kStudent = 0x7600000000000005ULL,
  kSubsample = 0x7600000000000006ULL,
};

inline constexpr uint64_t derive_stream(uint64_t master, StreamTag tag) {
  return derive_stream(master, static_cast<uint64_t>(tag));
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(mix64(seed)) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Bernoulli(p) for p in [0, 1].
  bool bernoulli(double p) { return uniform() < p; }

  double gaussian(double stddev) {
    return normal_(engine_) * stddev;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace dpgrad

#endif  // DPGRAD_RNG_HPP_

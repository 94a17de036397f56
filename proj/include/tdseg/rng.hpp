#ifndef TDSEG_RNG_HPP
#define TDSEG_RNG_HPP

#include <cstdint>

namespace tdseg {

// Hand-rolled generator so streams are identical across standard libraries.
// splitmix64 core; good enough statistically for data generation and sampling.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

  // uniform in [lo, hi)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n), n > 0
  uint64_t uniform_int(uint64_t n) { return next_u64() % n; }

  uint64_t state() const { return state_; }
  void set_state(uint64_t s) { state_ = s; }

 private:
  uint64_t state_;
};

// Derives an independent stream from a root seed and up to three tags.
// Used for per-sample / per-epoch streams so results do not depend on
// evaluation order.
inline uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
  Rng r(seed ^ (a * 0xD6E8FEB86659FD93ull) ^ (b * 0xCA5A826395121157ull) ^
        (c * 0x9E3779B97F4A7C15ull));
  return r.next_u64();
}

inline Rng sub_rng(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
  return Rng(mix_seed(seed, a, b, c));
}

}  // namespace tdseg

#endif

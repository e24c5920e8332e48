#pragma once
// Deterministic counter-based random number generation.
//
// Every stochastic routine in this repository draws from CounterRng, a keyed
// SplitMix64 generator evaluated in counter mode: raw output i is the
// SplitMix64 finalizer applied to key + (i+1)*2^64/phi.  Each output is a
// pure function of (key, i), so streams can be forked without shared state
// and a given (seed, draw index) pair produces the same bits on every
// platform with 64-bit IEEE doubles.
//
// Consumption order is part of the reproducibility contract:
//   - uniform01 / uniform01_open consume one raw output,
//   - gaussian consumes two raw outputs per *pair* and caches the second
//     variate (Box-Muller), so an odd number of gaussian draws leaves one
//     variate buffered,
//   - truncated_gaussian rejects and redraws whole gaussians.

#include <cmath>
#include <cstdint>

namespace asem {

class CounterRng {
 public:
  CounterRng() = default;
  explicit CounterRng(std::uint64_t key) : key_(key) {}

  // i-th raw output of the stream keyed by `key`, stateless.
  static std::uint64_t at(std::uint64_t key, std::uint64_t i) {
    std::uint64_t z = key + (i + 1) * 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t next_u64() { return at(key_, counter_++); }

  // Uniform on [0,1) with 53 random mantissa bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform on (0,1]; never zero, so log() stays finite.
  double uniform01_open() {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Fair coin on {-1.0, +1.0}.
  double sign() { return (next_u64() & 1ULL) ? 1.0 : -1.0; }

  // Standard normal via Box-Muller on (u, v) ~ (0,1] x [0,1).
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u = uniform01_open();
    const double v = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u));
    const double a = 2.0 * 3.14159265358979323846 * v;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Mean-zero gaussian with the given scale, redrawn until |z| <= max_sigmas.
  double truncated_gaussian(double scale, double max_sigmas = 3.0) {
    double z = gaussian();
    while (std::fabs(z) > max_sigmas) z = gaussian();
    return scale * z;
  }

  // Independent child stream.  Children with distinct ids do not collide
  // with each other or the parent for any realistic draw count.
  CounterRng fork(std::uint64_t child_id) const {
    return CounterRng(at(key_ ^ 0xA5A5B5B5C5C5D5D5ULL, child_id));
  }

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace asem

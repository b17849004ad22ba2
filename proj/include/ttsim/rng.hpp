#pragma once

#include <cmath>
#include <cstdint>

namespace ttsim {

// Deterministic splitmix64-based generator. We roll our own rather than use
// <random> distributions because libstdc++/libc++ normal_distribution outputs
// differ, and seeded runs must reproduce bit-exactly in saved artifacts.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0x9e3779b97f4a7c15ULL) : seed_(seed), state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  int uniform_int(int n) { return n <= 1 ? 0 : static_cast<int>(next() % static_cast<std::uint64_t>(n)); }

  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // Box-Muller; u1 in (0,1] so log is finite.
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    double mag = std::sqrt(-2.0 * std::log(u1));
    spare_ = mag * std::sin(6.283185307179586476925286766559 * u2);
    has_spare_ = true;
    return mag * std::cos(6.283185307179586476925286766559 * u2);
  }

  double gaussian(double mean, double std) { return mean + std * gaussian(); }

  // Independent stream derived from the original seed; stable under how much
  // this generator has already been consumed.
  Rng child(std::uint64_t stream) const {
    std::uint64_t z = seed_ ^ (0xd1342543de82ef95ULL * (stream + 0x632be59bd9b4e019ULL));
    z = (z ^ (z >> 33)) * 0xff51afd7ed558ccdULL;
    z = (z ^ (z >> 33)) * 0xc4ceb9fe1a85ec53ULL;
    return Rng(z ^ (z >> 33));
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace ttsim

#pragma once

#include <cstdint>
#include <random>

namespace ffm {

// mt19937_64 with hand-rolled distributions. std::uniform_* distributions
// are not bit-identical across standard libraries, and run outputs are
// compared exactly in the determinism tests, so the mapping from raw draws
// to values is fixed here.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t raw() { return gen_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
  }

  // Uniform integer in [0, n) by rejection, n >= 1.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = gen_();
    while (v >= limit) v = gen_();
    return v % n;
  }

  // Derives an independent stream, consuming one draw.
  Rng split() { return Rng(gen_() ^ 0x9e3779b97f4a7c15ull); }

private:
  std::mt19937_64 gen_;
};

}  // namespace ffm

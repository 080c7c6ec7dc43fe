#pragma once

#include <cmath>
#include <cstdint>

#include "dgdf/common.hpp"

namespace dgdf {

// Counter-based generator: output word i is a pure function of
// (seed, stream, counter + i), so draws can be replayed or computed in
// parallel without shared state. Advancing the counter is explicit.
class Rng {
 public:
  Rng() = default;
  Rng(std::uint64_t seed, std::uint64_t stream = 0, std::uint64_t counter = 0)
      : seed_(seed), stream_(stream), counter_(counter) {
    base_ = finalize(finalize(seed_ + 0x9E3779B97F4A7C15ull) ^
                     finalize(stream_ * 0xBF58476D1CE4E5B9ull + 0x632BE59BD9B4E019ull));
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  std::uint64_t counter() const { return counter_; }

  // Derives an independent stream from the same master seed.
  Rng fork(std::uint64_t stream) const { return Rng(seed_, stream, 0); }

  // Word at absolute counter position c, without advancing.
  std::uint64_t word_at(std::uint64_t c) const {
    return finalize(base_ + c * 0x9E3779B97F4A7C15ull);
  }

  std::uint64_t next_u64() { return word_at(counter_++); }

  void skip(std::uint64_t n) { counter_ += n; }

  // Uniform in [0, 1), 53-bit mantissa.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  float next_float() { return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f; }

  // Inclusive uniform integer on [lo, hi].
  std::int64_t next_int(std::int64_t lo, std::int64_t hi) {
    require(lo <= hi, "next_int: lo > hi");
    std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
    if (range == 0) return static_cast<std::int64_t>(next_u64());  // full 64-bit span
    return lo + static_cast<std::int64_t>(next_u64() % range);
  }

  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Standard normal via Box-Muller; consumes two words per pair.
  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = next_double();
    double u2 = next_double();
    if (u1 < 1e-300) u1 = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Stateless normal for flat index i relative to the current counter; used
  // by fill kernels that parallelize over elements. Does not advance.
  double normal_at(std::uint64_t i) const {
    std::uint64_t w1 = word_at(counter_ + 2 * i);
    std::uint64_t w2 = word_at(counter_ + 2 * i + 1);
    double u1 = static_cast<double>(w1 >> 11) * 0x1.0p-53;
    double u2 = static_cast<double>(w2 >> 11) * 0x1.0p-53;
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(6.283185307179586476925286766559 * u2);
  }

 private:
  static std::uint64_t finalize(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t seed_ = 0, stream_ = 0, counter_ = 0, base_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dgdf

#pragma once

#include <cstdint>
#include <random>

namespace blindspot {

// Seedable random stream backed by std::mt19937_64, whose output sequence is
// fixed by the standard. Uniform and normal variates are derived here rather
// than through <random> distributions, whose algorithms are left to the
// library vendor, so draws are bit-reproducible across toolchains.
//
// A stream is single-owner. Concurrent consumers derive their own stream
// with fork(key).
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0);

  std::uint64_t seed() const noexcept { return seed_; }
  // Number of 64-bit words drawn so far.
  std::uint64_t position() const noexcept { return position_; }

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  // Standard normal via Box-Muller; the second variate of each pair is cached.
  double normal();
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  // Independent child stream. The child seed depends only on (seed, key),
  // not on how much of this stream has been consumed.
  RngStream fork(std::uint64_t key) const;

 private:
  std::uint64_t seed_;
  std::uint64_t position_ = 0;
  std::mt19937_64 engine_;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

// SplitMix64 finalizer, used for seed derivation.
std::uint64_t mix_seed(std::uint64_t x) noexcept;

}  // namespace blindspot

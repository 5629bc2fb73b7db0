#pragma once

#include <cstdint>

namespace pybox {

// Finalizer from SplitMix64. A bijection on 64-bit words.
std::uint64_t mix64(std::uint64_t x) noexcept;

// Deterministic 64-bit stream used both by the grader and, bit-for-bit, by
// the in-sandbox harness to back `_rint`. Changing this changes every stored
// expected value, so treat the algorithm as part of the wire protocol.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next() noexcept;

  // Uniform in [0, bound) by rejection. bound must be nonzero.
  std::uint64_t below(std::uint64_t bound) noexcept;

  // Uniform in [lo, hi], both inclusive. Requires lo <= hi.
  std::int64_t between(std::int64_t lo, std::int64_t hi) noexcept;

 private:
  std::uint64_t state_;
};

// Seed of grading round `round` (0-based) for a given master seed.
std::uint64_t round_seed(std::uint64_t master_seed, std::uint32_t round) noexcept;

}  // namespace pybox

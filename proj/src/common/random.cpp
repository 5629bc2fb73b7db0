#include "pybox/common/random.hpp"

#include <limits>

namespace pybox {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t mix64(std::uint64_t x) noexcept {
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t SplitMix64::next() noexcept {
  state_ += kGolden;
  return mix64(state_);
}

std::uint64_t SplitMix64::below(std::uint64_t bound) noexcept {
  // 2^64 mod bound; draws in the final partial block are rejected.
  const std::uint64_t remainder = (0 - bound) % bound;
  std::uint64_t x = next();
  if (remainder != 0) {
    const std::uint64_t limit = 0 - remainder;
    while (x >= limit) x = next();
  }
  return x % bound;
}

std::int64_t SplitMix64::between(std::int64_t lo, std::int64_t hi) noexcept {
  const auto span = static_cast<std::uint64_t>(hi) - static_cast<std::uint64_t>(lo);
  if (span == std::numeric_limits<std::uint64_t>::max()) {
    return static_cast<std::int64_t>(next());
  }
  return static_cast<std::int64_t>(static_cast<std::uint64_t>(lo) + below(span + 1));
}

std::uint64_t round_seed(std::uint64_t master_seed, std::uint32_t round) noexcept {
  return mix64(master_seed + kGolden * (static_cast<std::uint64_t>(round) + 1));
}

}  // namespace pybox

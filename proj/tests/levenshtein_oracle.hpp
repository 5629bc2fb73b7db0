#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace pybox::testing {

using Chars = std::vector<std::string>;  // one UTF-8 encoded code point each

// The recursive definition, memoized only so 8x8 inputs finish quickly.
inline std::size_t oracle(const Chars& a, const Chars& b) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  std::function<std::size_t(std::size_t, std::size_t)> d = [&](std::size_t i,
                                                                std::size_t j) -> std::size_t {
    if (i == 0) return j;
    if (j == 0) return i;
    const auto key = std::make_pair(i, j);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    const std::size_t cost = a[i - 1] == b[j - 1] ? 0 : 1;
    const std::size_t v = std::min({d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + cost});
    memo[key] = v;
    return v;
  };
  return d(a.size(), b.size());
}

inline std::string encode(const Chars& s) {
  std::string out;
  for (const auto& c : s) out += c;
  return out;
}

inline Chars random_chars(std::mt19937_64& rng, std::size_t max_len) {
  static const Chars alphabet = {"a", "b", "c", " ", "\xc3\xa9", "\xe2\x82\xac"};  // é, €
  Chars out(rng() % (max_len + 1));
  for (auto& c : out) c = alphabet[rng() % alphabet.size()];
  return out;
}

}  // namespace pybox::testing

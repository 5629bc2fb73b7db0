#include "pybox/grader/levenshtein.hpp"

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "pybox/common/text.hpp"

namespace pybox::grader {

namespace {

std::size_t distance(const std::u32string& a, const std::u32string& b) {
  // Two rows over the shorter string.
  const std::u32string& outer = a.size() >= b.size() ? a : b;
  const std::u32string& inner = a.size() >= b.size() ? b : a;
  std::vector<std::size_t> prev(inner.size() + 1), cur(inner.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= outer.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= inner.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (outer[i - 1] == inner[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[inner.size()];
}

}  // namespace

std::size_t levenshtein(std::string_view a, std::string_view b) {
  return distance(text::decode_utf8(a), text::decode_utf8(b));
}

std::size_t levenshtein_bounded(std::string_view a_utf8, std::string_view b_utf8,
                                std::size_t limit) {
  const std::u32string a = text::decode_utf8(a_utf8);
  const std::u32string b = text::decode_utf8(b_utf8);
  const std::size_t over = limit + 1;
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  if ((n > m ? n - m : m - n) > limit) return over;

  // Only cells with |i - j| <= limit can hold a value <= limit; everything
  // outside the band is treated as `over`.
  std::vector<std::size_t> prev(m + 1, over), cur(m + 1, over);
  for (std::size_t j = 0; j <= std::min(m, limit); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    const std::size_t lo = i > limit ? i - limit : 0;
    const std::size_t hi = std::min(m, i + limit);
    // Cells just outside the band are read by the next row.
    if (lo > 0) cur[lo - 1] = over;
    if (hi + 1 <= m) cur[hi + 1] = over;
    cur[0] = lo == 0 ? std::min(i, over) : over;
    std::size_t row_min = cur[0];
    for (std::size_t j = std::max<std::size_t>(lo, 1); j <= hi; ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub, over});
      row_min = std::min(row_min, cur[j]);
    }
    if (row_min >= over) return over;
    std::swap(prev, cur);
  }
  return std::min(prev[m], over);
}

}  // namespace pybox::grader

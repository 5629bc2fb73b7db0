#pragma once

#include <cstddef>
#include <string_view>

namespace pybox::grader {

// Character-level (Unicode code point) edit distance with unit-cost
// insertions, deletions and substitutions.
std::size_t levenshtein(std::string_view a, std::string_view b);

// min(levenshtein(a, b), limit + 1), computed in O(limit * max(|a|, |b|)) so
// a huge submission cannot stall the constraint check.
std::size_t levenshtein_bounded(std::string_view a, std::string_view b, std::size_t limit);

}  // namespace pybox::grader

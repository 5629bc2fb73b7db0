#include "pybox/scramble/scramble.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "pybox/common/random.hpp"

namespace pybox::scramble {

namespace {

void require_scramble(const dsl::ExerciseSpec& spec) {
  if (spec.mode() != dsl::GradingMode::Scramble || spec.scramble_lines.size() < 2) {
    throw std::invalid_argument("exercise '" + spec.exercise_id + "' is not a scramble exercise");
  }
}

}  // namespace

ScramblePresentation present(const dsl::ExerciseSpec& spec, std::uint64_t seed) {
  require_scramble(spec);
  const auto& canonical = spec.scramble_lines;
  const std::size_t n = canonical.size();

  const bool all_equal = std::all_of(canonical.begin(), canonical.end(),
                                     [&](const std::string& l) { return l == canonical[0]; });

  SplitMix64 rng(seed);
  std::vector<std::size_t> perm(n);
  ScramblePresentation out;
  while (true) {
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = n - 1; i > 0; --i) {
      std::swap(perm[i], perm[rng.below(i + 1)]);
    }
    out.lines.clear();
    for (auto idx : perm) out.lines.push_back(canonical[idx]);

    const bool identity = std::is_sorted(perm.begin(), perm.end());
    // With only one distinct line every ordering displays the same; settle for
    // a non-identity index map.
    if (all_equal ? !identity : out.lines != canonical) break;
  }
  out.permutation = std::move(perm);
  return out;
}

grader::GradeReport judge_order(const dsl::ExerciseSpec& spec,
                                const std::vector<std::string>& submitted) {
  require_scramble(spec);
  const auto& canonical = spec.scramble_lines;

  grader::GradeReport report;
  report.rounds.push_back({1, {}});
  auto& results = report.rounds.back().results;

  auto sorted_submitted = submitted;
  auto sorted_canonical = canonical;
  std::sort(sorted_submitted.begin(), sorted_submitted.end());
  std::sort(sorted_canonical.begin(), sorted_canonical.end());
  if (sorted_submitted != sorted_canonical) {
    report.verdict = grader::Verdict::ConstraintViolation;
    report.constraint_notes.push_back("lines were altered");
    report.summary = "The submitted lines are not a rearrangement of the given lines.";
    report.failed_round = 1;
    results.push_back({"line order", "", "", false, "lines were altered"});
    return report;
  }

  const auto mismatch = std::mismatch(canonical.begin(), canonical.end(), submitted.begin());
  if (mismatch.first == canonical.end()) {
    report.verdict = grader::Verdict::Correct;
    report.summary = "All lines are in the right order.";
    results.push_back({"line order", "", "", true, ""});
    return report;
  }

  const auto position = static_cast<std::size_t>(mismatch.first - canonical.begin()) + 1;
  report.verdict = grader::Verdict::Incorrect;
  report.failed_round = 1;
  report.summary = "Line " + std::to_string(position) + " is out of place.";
  results.push_back({"line order", "", "", false,
                     "first line out of place: line " + std::to_string(position)});
  return report;
}

}  // namespace pybox::scramble

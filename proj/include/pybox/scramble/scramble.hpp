#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pybox/dsl/exercise_spec.hpp"
#include "pybox/grader/report.hpp"

namespace pybox::scramble {

// lines[i] is canonical line permutation[i]. The permutation never leaves the
// server; clients only get `lines`.
struct ScramblePresentation {
  std::vector<std::string> lines;
  std::vector<std::size_t> permutation;
};

// Deterministic in (spec, seed). Whenever the lines admit a different
// ordering, the displayed order differs from the canonical one. Throws
// std::invalid_argument unless spec is a scramble exercise.
ScramblePresentation present(const dsl::ExerciseSpec& spec, std::uint64_t seed);

// Correct iff `submitted` matches the canonical order, equal lines being
// interchangeable. A submission that is not a rearrangement of the canonical
// lines is a ConstraintViolation. Failure feedback names only the first wrong
// position.
grader::GradeReport judge_order(const dsl::ExerciseSpec& spec,
                                const std::vector<std::string>& submitted);

}  // namespace pybox::scramble

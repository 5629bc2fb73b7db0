#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pybox/dsl/exercise_spec.hpp"
#include "pybox/grader/grader.hpp"

namespace pybox::grader {

// The submission that must earn Correct on its own spec: the solver, or the
// canonical line order for scramble exercises. nullopt when the spec has
// neither.
std::optional<std::string> reference_submission(const dsl::ExerciseSpec& spec);

struct SelfcheckEntry {
  std::string exercise_id;
  std::filesystem::path path;
  bool passed = false;
  std::string message;  // why it failed, or the verdict
  std::optional<GradeReport> report;
  double seconds = 0;
};

// Grades every spec in dir with its reference submission, up to `jobs` at a
// time. Results are in exercise id order.
std::vector<SelfcheckEntry> selfcheck(const std::filesystem::path& dir, const Grader& grader,
                                      std::uint64_t master_seed, unsigned jobs = 1);

}  // namespace pybox::grader

#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pybox/dsl/exercise_spec.hpp"
#include "pybox/grader/harness_protocol.hpp"
#include "pybox/grader/report.hpp"
#include "pybox/sandbox/sandbox.hpp"

namespace pybox::grader {

// A failure that is the exercise author's fault (bad solver, crashing
// checker, malformed harness output), never the student's.
class GraderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Expected result for one autotest (value tree) or one stdin block (output).
struct Expectation {
  std::string label;
  std::optional<std::string> stdin_block;
  nlohmann::json value;
  std::string rendered;
};

struct Round {
  std::uint32_t index = 0;  // 0-based
  std::uint64_t seed = 0;
  // Precode for this round. `_rint` inside it draws from the stream seeded
  // by `seed`, so (resolved_precode, seed) fixes every precode value.
  std::string resolved_precode;
  std::vector<Expectation> expected;
};

struct TestPlan {
  std::uint64_t master_seed = 0;
  std::vector<Round> rounds;
};

struct GraderOptions {
  sandbox::SandboxPolicy policy;
  std::string python = PYBOX_PYTHON;
};

class Grader {
 public:
  explicit Grader(GraderOptions options = {});

  // Rounds and expected values from the model solution. Throws GraderError
  // when the solver fails.
  TestPlan build_test_plan(const dsl::ExerciseSpec& spec, std::uint64_t master_seed) const;

  // Full grading. Never throws for student or author mistakes; those become
  // verdicts (GraderError for the latter).
  GradeReport grade(const dsl::ExerciseSpec& spec, const std::string& submission,
                    std::uint64_t master_seed) const;

  TestResult run_required_error(const dsl::ExerciseSpec& spec, const std::string& submission,
                                const Round& round) const;

  // Throws GraderError if the checker crashes or reports nothing.
  std::vector<TestResult> run_custom_checker(const dsl::ExerciseSpec& spec,
                                             const std::string& submission,
                                             const Round& round) const;

  // Runs the submission once with student-chosen stdin (or a call with
  // student-chosen arguments) without grading; the "test input" box.
  HarnessRun trial_run(const dsl::ExerciseSpec& spec, const std::string& submission,
                       const std::optional<std::string>& stdin_text,
                       const std::optional<std::string>& call_args, std::uint64_t seed) const;

  const GraderOptions& options() const { return options_; }

 private:
  HarnessRun run(HarnessJob job) const;

  GraderOptions options_;
};

// Stdin blocks actually graded for a StdIO spec (one empty block if none).
std::vector<std::string> effective_inputs(const dsl::ExerciseSpec& spec);

}  // namespace pybox::grader

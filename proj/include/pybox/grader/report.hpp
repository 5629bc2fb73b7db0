#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace pybox::grader {

enum class Verdict {
  Correct,
  Incorrect,
  TimeLimit,
  RuntimeError,
  ConstraintViolation,
  GraderError,
};

std::string_view to_string(Verdict v);
std::optional<Verdict> verdict_from_string(std::string_view s);

struct TestResult {
  std::string label;
  std::string expected;
  std::string observed;
  bool passed = false;
  std::string detail;

  bool operator==(const TestResult&) const = default;
};

struct RoundResults {
  std::uint32_t round = 0;  // 1-based
  std::vector<TestResult> results;

  bool operator==(const RoundResults&) const = default;
};

// What the student sees in the grading box. Contains no timing data, so two
// gradings with the same (spec, submission, seed) serialize identically.
struct GradeReport {
  Verdict verdict = Verdict::GraderError;
  std::vector<RoundResults> rounds;
  std::vector<std::string> constraint_notes;
  std::optional<std::uint32_t> failed_round;
  std::string summary;

  bool correct() const { return verdict == Verdict::Correct; }
  std::size_t test_count() const;
  std::size_t passed_count() const;

  bool operator==(const GradeReport&) const = default;
};

nlohmann::json to_json(const GradeReport& report);
GradeReport report_from_json(const nlohmann::json& j);

// Plain-text table for terminals.
std::string render_text(const GradeReport& report);

}  // namespace pybox::grader

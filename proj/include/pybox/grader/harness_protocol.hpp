#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "pybox/sandbox/sandbox.hpp"

namespace pybox::grader {

// One grading round as seen by the in-sandbox harness.
struct HarnessJob {
  std::string precode;
  std::string student_code;
  std::vector<std::string> probes;
  std::optional<std::string> stdin_block;
  std::vector<std::string> taboo;
  std::optional<std::string> checker;
  std::uint64_t random_seed = 0;
  std::size_t stdout_cap = 64 * 1024;
};

struct HarnessError {
  std::string where;  // student | probe | precode | checker | harness
  std::string error_class;
  std::string message;
  std::optional<int> line;

  bool student_side() const { return where == "student" || where == "probe"; }
  // "NameError: name 'x' is not defined (line 3)"
  std::string describe() const;
};

struct ProbeResult {
  std::string expr;
  bool ok = false;
  nlohmann::json value;  // canonical value tree when ok
  std::string rendered;
  std::optional<HarnessError> error;
};

struct CheckRecord {
  bool passed = false;
  std::string message;
};

struct HarnessReport {
  std::string stdout_text;
  bool stdout_truncated = false;
  std::optional<HarnessError> error;
  std::optional<std::string> taboo;
  std::vector<ProbeResult> probes;
  std::vector<CheckRecord> checks;
};

struct HarnessRun {
  sandbox::ExecutionOutcome outcome;
  std::optional<HarnessReport> report;
  // Set when output carried our nonce but the record after it was unusable.
  std::string protocol_error;
};

inline constexpr std::string_view kReportSentinel = "\x1e__PYBOX_REPORT__";
inline constexpr char kReportVersion = '\x01';

// The harness program shipped into every bundle.
std::string_view harness_source();

// Job record as written to the bundle's job.json.
nlohmann::json job_record(const HarnessJob& job, std::string_view nonce);

// Finds the last report tagged with nonce in the harness stdout. Returns
// nullopt when absent; sets *error when present but malformed.
std::optional<HarnessReport> parse_harness_output(std::string_view output, std::string_view nonce,
                                                  std::string* error);

// Runs one job. The sandbox policy's output cap applies to the student; the
// harness run itself gets headroom for the report.
HarnessRun run_harness(const HarnessJob& job, const sandbox::SandboxPolicy& policy,
                       const std::string& python);

}  // namespace pybox::grader

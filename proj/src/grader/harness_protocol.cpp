#include "pybox/grader/harness_protocol.hpp"

#include <array>
#include <random>

namespace pybox::grader {

namespace detail {
extern const std::string_view kHarnessSource;
}

namespace {

std::string fresh_nonce() {
  thread_local std::random_device device;
  std::array<std::uint32_t, 4> words{};
  for (auto& w : words) w = device();
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (auto w : words) {
    for (int shift = 28; shift >= 0; shift -= 4) out.push_back(kHex[(w >> shift) & 0xF]);
  }
  return out;
}

HarnessError error_from(const nlohmann::json& j) {
  HarnessError e;
  e.where = j.at("where").get<std::string>();
  e.error_class = j.at("class").get<std::string>();
  e.message = j.at("message").get<std::string>();
  if (j.contains("line") && j["line"].is_number_integer()) e.line = j["line"].get<int>();
  return e;
}

// Room for the report on top of the student's own output.
constexpr std::uint64_t kReportHeadroom = 4ull << 20;

}  // namespace

std::string HarnessError::describe() const {
  std::string out = error_class;
  if (!message.empty()) out += ": " + message;
  if (line) out += " (line " + std::to_string(*line) + ")";
  return out;
}

std::string_view harness_source() { return detail::kHarnessSource; }

nlohmann::json job_record(const HarnessJob& job, std::string_view nonce) {
  nlohmann::json j = {
      {"nonce", nonce},
      {"precode", job.precode},
      {"student_file", "student.py"},
      {"probes", job.probes},
      {"taboo", job.taboo},
      {"seed", std::to_string(job.random_seed)},
      {"stdout_cap", job.stdout_cap},
      {"stdin", nullptr},
      {"checker", nullptr},
  };
  if (job.stdin_block) j["stdin"] = *job.stdin_block;
  if (job.checker) j["checker"] = *job.checker;
  return j;
}

std::optional<HarnessReport> parse_harness_output(std::string_view output, std::string_view nonce,
                                                  std::string* error) {
  std::string marker = "\n";
  marker += kReportSentinel;
  marker += nonce;
  marker += "\n";
  const auto at = output.rfind(marker);
  if (at == std::string_view::npos) return std::nullopt;

  const auto fail = [&](std::string message) -> std::optional<HarnessReport> {
    if (error) *error = std::move(message);
    return std::nullopt;
  };

  std::string_view rest = output.substr(at + marker.size());
  if (rest.empty() || rest.front() != kReportVersion) {
    return fail("unsupported harness report version");
  }
  rest.remove_prefix(1);
  // The record is one ASCII line; anything after it (an atexit hook, say) is
  // not ours.
  rest = rest.substr(0, rest.find('\n'));

  try {
    const auto j = nlohmann::json::parse(rest);
    HarnessReport r;
    r.stdout_text = j.at("stdout").get<std::string>();
    r.stdout_truncated = j.at("stdout_truncated").get<bool>();
    if (!j.at("error").is_null()) r.error = error_from(j["error"]);
    if (!j.at("taboo").is_null()) r.taboo = j["taboo"].get<std::string>();
    for (const auto& p : j.at("probes")) {
      ProbeResult probe;
      probe.expr = p.at("expr").get<std::string>();
      probe.ok = p.at("ok").get<bool>();
      if (probe.ok) {
        probe.value = p.at("value");
        probe.rendered = p.at("render").get<std::string>();
      } else {
        probe.error = error_from(p.at("error"));
      }
      r.probes.push_back(std::move(probe));
    }
    for (const auto& c : j.at("checks")) {
      r.checks.push_back({c.at("passed").get<bool>(), c.at("message").get<std::string>()});
    }
    return r;
  } catch (const std::exception& e) {
    return fail(std::string("malformed harness report: ") + e.what());
  }
}

HarnessRun run_harness(const HarnessJob& job, const sandbox::SandboxPolicy& policy,
                       const std::string& python) {
  const std::string nonce = fresh_nonce();
  sandbox::Bundle bundle;
  bundle.files = {
      {"harness.py", std::string(harness_source())},
      {"student.py", job.student_code},
      {"job.json", job_record(job, nonce).dump()},
  };
  bundle.argv = {python, "-I", "-B", "harness.py"};

  auto harness_policy = policy;
  harness_policy.output_cap = policy.output_cap + kReportHeadroom;

  HarnessRun run;
  run.outcome = sandbox::execute(bundle, harness_policy);
  run.report = parse_harness_output(run.outcome.stdout_data, nonce, &run.protocol_error);
  return run;
}

}  // namespace pybox::grader

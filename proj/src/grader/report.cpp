#include "pybox/grader/report.hpp"

#include <algorithm>
#include <array>
#include <sstream>

namespace pybox::grader {

namespace {

constexpr std::array<std::pair<Verdict, std::string_view>, 6> kVerdictNames = {{
    {Verdict::Correct, "Correct"},
    {Verdict::Incorrect, "Incorrect"},
    {Verdict::TimeLimit, "TimeLimit"},
    {Verdict::RuntimeError, "RuntimeError"},
    {Verdict::ConstraintViolation, "ConstraintViolation"},
    {Verdict::GraderError, "GraderError"},
}};

std::string clip(std::string_view s, std::size_t width) {
  std::string one_line;
  for (char c : s) one_line += (c == '\n') ? std::string("\\n") : std::string(1, c);
  if (one_line.size() <= width) return one_line;
  return one_line.substr(0, width - 3) + "...";
}

}  // namespace

std::string_view to_string(Verdict v) {
  for (const auto& [verdict, name] : kVerdictNames) {
    if (verdict == v) return name;
  }
  return "?";
}

std::optional<Verdict> verdict_from_string(std::string_view s) {
  for (const auto& [verdict, name] : kVerdictNames) {
    if (name == s) return verdict;
  }
  return std::nullopt;
}

std::size_t GradeReport::test_count() const {
  std::size_t n = 0;
  for (const auto& r : rounds) n += r.results.size();
  return n;
}

std::size_t GradeReport::passed_count() const {
  std::size_t n = 0;
  for (const auto& r : rounds) {
    n += std::count_if(r.results.begin(), r.results.end(),
                       [](const TestResult& t) { return t.passed; });
  }
  return n;
}

nlohmann::json to_json(const GradeReport& report) {
  nlohmann::json rounds = nlohmann::json::array();
  for (const auto& round : report.rounds) {
    nlohmann::json results = nlohmann::json::array();
    for (const auto& t : round.results) {
      results.push_back({{"label", t.label},
                         {"expected", t.expected},
                         {"observed", t.observed},
                         {"passed", t.passed},
                         {"detail", t.detail}});
    }
    rounds.push_back({{"round", round.round}, {"results", std::move(results)}});
  }
  nlohmann::json j = {
      {"verdict", to_string(report.verdict)},
      {"summary", report.summary},
      {"rounds", std::move(rounds)},
      {"constraint_notes", report.constraint_notes},
      {"failed_round", nullptr},
  };
  if (report.failed_round) j["failed_round"] = *report.failed_round;
  return j;
}

GradeReport report_from_json(const nlohmann::json& j) {
  GradeReport report;
  const auto verdict = verdict_from_string(j.at("verdict").get<std::string>());
  if (!verdict) throw std::runtime_error("unknown verdict in report");
  report.verdict = *verdict;
  report.summary = j.value("summary", "");
  for (const auto& r : j.at("rounds")) {
    RoundResults round;
    round.round = r.at("round").get<std::uint32_t>();
    for (const auto& t : r.at("results")) {
      round.results.push_back({t.at("label").get<std::string>(), t.at("expected").get<std::string>(),
                               t.at("observed").get<std::string>(), t.at("passed").get<bool>(),
                               t.at("detail").get<std::string>()});
    }
    report.rounds.push_back(std::move(round));
  }
  report.constraint_notes = j.value("constraint_notes", std::vector<std::string>{});
  if (j.contains("failed_round") && !j["failed_round"].is_null()) {
    report.failed_round = j["failed_round"].get<std::uint32_t>();
  }
  return report;
}

std::string render_text(const GradeReport& report) {
  std::ostringstream out;
  out << "verdict: " << to_string(report.verdict) << '\n';
  if (!report.summary.empty()) out << report.summary << '\n';
  for (const auto& note : report.constraint_notes) out << "constraint: " << note << '\n';
  for (const auto& round : report.rounds) {
    out << "round " << round.round << '\n';
    for (const auto& t : round.results) {
      out << "  [" << (t.passed ? "pass" : "FAIL") << "] " << clip(t.label, 30)
          << "  expected: " << clip(t.expected, 30) << "  observed: " << clip(t.observed, 30);
      if (!t.detail.empty()) out << "  (" << clip(t.detail, 60) << ')';
      out << '\n';
    }
  }
  out << report.passed_count() << '/' << report.test_count() << " tests passed\n";
  return out.str();
}

}  // namespace pybox::grader

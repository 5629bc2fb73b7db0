#include <algorithm>

#include "pybox/common/text.hpp"
#include "pybox/dsl/exercise_spec.hpp"

namespace pybox::dsl {

namespace {

class Collector {
 public:
  void error(std::string msg) { issues.push_back({Issue::Severity::Error, std::move(msg)}); }
  void warning(std::string msg) { issues.push_back({Issue::Severity::Warning, std::move(msg)}); }
  std::vector<Issue> issues;
};

bool has_separator_line(std::string_view block) {
  for (const auto& line : text::split(block, '\n')) {
    if (line == "---") return true;
  }
  return false;
}

}  // namespace

bool has_errors(const std::vector<Issue>& issues) {
  return std::any_of(issues.begin(), issues.end(), [](const Issue& i) { return i.is_error(); });
}

std::vector<Issue> validate_spec(const ExerciseSpec& spec) {
  Collector out;

  for (const auto& name : spec.unknown_attributes) {
    out.warning("unknown attribute '" + name + "'");
  }
  if (spec.repeats < 1) out.error("repeats must be at least 1");

  const bool scramble = !spec.scramble_lines.empty();
  const bool tests = !spec.autotests.empty();
  const bool inputs = !spec.test_inputs.empty();

  // Mode compatibility.
  if (scramble) {
    if (spec.scramble_lines.size() < 2) out.error("scramble requires ≥ 2 lines");
    if (tests) out.error("scramble cannot be combined with autotests");
    if (inputs) out.error("scramble cannot be combined with inputs");
    if (spec.required_error) out.error("scramble cannot be combined with required_error");
    if (spec.checker) out.error("scramble cannot be combined with checker");
    if (!spec.taboo.empty()) out.error("scramble cannot be combined with taboo");
    if (spec.max_edit) out.error("scramble cannot be combined with max_edit");
    if (spec.initial_code) out.error("scramble cannot be combined with initial_code");
    if (spec.solver) out.warning("solver is ignored by scramble exercises");
    if (!spec.precode.empty()) out.warning("precode is ignored by scramble exercises");
  }
  if (spec.required_error) {
    if (tests) out.error("required_error cannot be combined with autotests");
    if (inputs) out.error("required_error cannot be combined with inputs");
    if (spec.checker) out.error("required_error cannot be combined with checker");
    if (!text::is_identifier(*spec.required_error)) {
      out.error("required_error must be an error class name");
    }
  }
  if (spec.checker && inputs) out.error("checker cannot be combined with inputs");
  if (tests && inputs) out.error("autotests cannot be combined with inputs");

  const bool code_writing = !scramble;
  if (code_writing && (tests || inputs) && !spec.solver) {
    out.error("solver required to generate expected values");
  }
  if (code_writing && !tests && !inputs && !spec.solver && !spec.required_error &&
      !spec.checker) {
    out.error("nothing to grade: add a solver, autotests, inputs, required_error, checker or scramble");
  }

  if (spec.max_edit && !spec.initial_code) {
    out.error("max_edit requires initial_code to measure edits against");
  }

  for (const auto& name : spec.taboo) {
    if (!text::is_identifier(name)) out.error("taboo entry '" + name + "' is not a name");
  }
  for (const auto& test : spec.autotests) {
    if (test.empty() || test.find('\n') != std::string::npos || text::trim(test) != test) {
      out.error("autotest '" + test + "' must be a single trimmed expression");
    }
  }
  for (const auto& line : spec.scramble_lines) {
    if (text::trim(line).empty() || line.find('\n') != std::string::npos) {
      out.error("scramble lines must be single non-blank lines");
      break;
    }
  }
  for (const auto& block : spec.test_inputs) {
    if (has_separator_line(block)) out.error("test input contains a '---' separator line");
  }
  for (const auto& block : spec.hints) {
    if (has_separator_line(block)) out.error("hint contains a '---' separator line");
  }

  const auto no_cr = [&](std::string_view field, std::string_view value) {
    if (value.find('\r') != std::string_view::npos) {
      out.error(std::string(field) + " contains a carriage return");
    }
  };
  no_cr("precode", spec.precode);
  if (spec.solver) no_cr("solver", *spec.solver);
  if (spec.initial_code) no_cr("initial_code", *spec.initial_code);
  if (spec.checker) no_cr("checker", *spec.checker);
  for (const auto& b : spec.test_inputs) no_cr("inputs", b);
  for (const auto& b : spec.hints) no_cr("hints", b);
  for (const auto& l : spec.scramble_lines) no_cr("scramble", l);

  return out.issues;
}

}  // namespace pybox::dsl

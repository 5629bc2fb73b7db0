#include "pybox/grader/grader.hpp"

#include <algorithm>

#include "pybox/common/random.hpp"
#include "pybox/common/text.hpp"
#include "pybox/grader/levenshtein.hpp"
#include "pybox/grader/values.hpp"
#include "pybox/scramble/scramble.hpp"

namespace pybox::grader {

namespace {

using dsl::GradingMode;

// Terminal outcome of one harness run that prevents comparing results.
struct Failure {
  Verdict verdict;
  std::string detail;
};

std::string describe_outcome(const sandbox::ExecutionOutcome& o) {
  std::string out(sandbox::to_string(o.status));
  out += " (" + o.termination() + ")";
  if (!o.error.empty()) out += ": " + o.error;
  return out;
}

// Problems in the run itself, before looking at what the student computed.
// Student errors are left to the caller.
std::optional<Failure> infrastructure_failure(const HarnessRun& run) {
  using sandbox::Status;
  const auto& o = run.outcome;
  if (o.status == Status::TimeLimit) {
    return Failure{Verdict::TimeLimit, "time limit exceeded"};
  }
  if (o.status == Status::SandboxError) {
    return Failure{Verdict::GraderError, "sandbox failure: " + o.error};
  }
  if (run.report) {
    const auto& err = run.report->error;
    if (err && !err->student_side()) {
      const std::string who = err->where == "precode"   ? "exercise precode"
                              : err->where == "checker" ? "custom checker"
                                                        : "grading harness";
      return Failure{Verdict::GraderError, who + " failed: " + err->describe()};
    }
    return std::nullopt;
  }
  if (!run.protocol_error.empty()) {
    return Failure{Verdict::GraderError, run.protocol_error};
  }
  if (o.status == Status::MemoryLimit) {
    return Failure{Verdict::RuntimeError, "memory limit exceeded"};
  }
  if (o.status == Status::OutputLimit) {
    return Failure{Verdict::RuntimeError, "output limit exceeded"};
  }
  return Failure{Verdict::RuntimeError,
                 "program ended before grading finished: " + describe_outcome(o)};
}

std::string student_error_detail(const HarnessError& e) {
  if (e.error_class == "MemoryError") return "memory limit exceeded (MemoryError)";
  return e.describe();
}

// Everything after infrastructure checks that stops a round: forbidden
// builtins and uncaught student errors.
std::optional<Failure> student_failure(const HarnessReport& r) {
  if (r.taboo) {
    return Failure{Verdict::ConstraintViolation, "use of forbidden builtin '" + *r.taboo + "'"};
  }
  if (r.error && r.error->student_side()) {
    return Failure{Verdict::RuntimeError, student_error_detail(*r.error)};
  }
  return std::nullopt;
}

int severity(Verdict v) {
  switch (v) {
    case Verdict::Correct: return 0;
    case Verdict::Incorrect: return 1;
    case Verdict::RuntimeError: return 2;
    case Verdict::TimeLimit: return 3;
    case Verdict::ConstraintViolation: return 4;
    case Verdict::GraderError: return 5;
  }
  return 5;
}

GradeReport grader_error_report(std::string message) {
  GradeReport report;
  report.verdict = Verdict::GraderError;
  report.summary = "The grader could not check this exercise: " + std::move(message);
  return report;
}

std::string input_label(std::size_t index, std::size_t count) {
  return count == 1 ? "output" : "input #" + std::to_string(index + 1);
}

std::string summary_for(Verdict v) {
  switch (v) {
    case Verdict::Correct: return "Correct! All tests passed.";
    case Verdict::Incorrect: return "Some tests did not pass.";
    case Verdict::TimeLimit: return "Your program took too long to run.";
    case Verdict::RuntimeError: return "Your program stopped with an error.";
    case Verdict::ConstraintViolation: return "Your code breaks a rule of this exercise.";
    case Verdict::GraderError: return "The grader could not check this exercise.";
  }
  return {};
}

std::string callee_of(const std::string& expr) {
  const auto paren = expr.find('(');
  return std::string(text::trim(std::string_view(expr).substr(0, paren)));
}

}  // namespace

std::vector<std::string> effective_inputs(const dsl::ExerciseSpec& spec) {
  if (spec.test_inputs.empty()) return {""};
  return spec.test_inputs;
}

Grader::Grader(GraderOptions options) : options_(std::move(options)) {}

HarnessRun Grader::run(HarnessJob job) const {
  job.stdout_cap = options_.policy.output_cap;
  return run_harness(job, options_.policy, options_.python);
}

TestPlan Grader::build_test_plan(const dsl::ExerciseSpec& spec, std::uint64_t master_seed) const {
  TestPlan plan;
  plan.master_seed = master_seed;
  const GradingMode mode = spec.mode();
  const bool needs_solver = mode == GradingMode::VariableCheck ||
                            mode == GradingMode::FunctionCheck || mode == GradingMode::StdIO;
  if (needs_solver && !spec.solver) {
    throw GraderError("exercise has no model solution to generate expected values");
  }

  for (std::uint32_t i = 0; i < spec.repeats; ++i) {
    Round round;
    round.index = i;
    round.seed = round_seed(master_seed, i);
    round.resolved_precode = spec.precode;
    const auto where = "model solution failed in round " + std::to_string(i + 1) + ": ";

    const auto solver_run = [&](HarnessJob job) {
      job.precode = spec.precode;
      job.student_code = *spec.solver;
      job.random_seed = round.seed;
      HarnessRun r = run(std::move(job));
      if (auto f = infrastructure_failure(r)) throw GraderError(where + f->detail);
      if (r.report->taboo) throw GraderError(where + "uses forbidden builtin " + *r.report->taboo);
      if (r.report->error) throw GraderError(where + r.report->error->describe());
      return std::move(*r.report);
    };

    if (mode == GradingMode::VariableCheck || mode == GradingMode::FunctionCheck) {
      HarnessJob job;
      job.probes = spec.autotests;
      const HarnessReport report = solver_run(std::move(job));
      if (report.probes.size() != spec.autotests.size()) {
        throw GraderError(where + "harness returned the wrong number of autotest values");
      }
      for (const auto& probe : report.probes) {
        if (!probe.ok) {
          throw GraderError(where + "autotest '" + probe.expr + "' raised " +
                            probe.error->describe());
        }
        round.expected.push_back({probe.expr, std::nullopt, probe.value, probe.rendered});
      }
    } else if (mode == GradingMode::StdIO) {
      const auto inputs = effective_inputs(spec);
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        HarnessJob job;
        job.stdin_block = inputs[k];
        const HarnessReport report = solver_run(std::move(job));
        if (report.stdout_truncated) throw GraderError(where + "model output exceeds the output cap");
        round.expected.push_back({input_label(k, inputs.size()), inputs[k], nullptr,
                                  text::normalize_output(report.stdout_text)});
      }
    }
    plan.rounds.push_back(std::move(round));
  }
  return plan;
}

TestResult Grader::run_required_error(const dsl::ExerciseSpec& spec, const std::string& submission,
                                      const Round& round) const {
  const std::string wanted = spec.required_error.value_or("");
  TestResult result;
  result.label = "raises " + wanted;
  result.expected = wanted;

  HarnessJob job;
  job.precode = round.resolved_precode;
  job.student_code = submission;
  job.taboo = spec.taboo;
  job.random_seed = round.seed;
  const HarnessRun r = run(std::move(job));
  if (auto f = infrastructure_failure(r)) {
    // The caller turns TimeLimit/GraderError rows into verdicts.
    result.observed = std::string(to_string(f->verdict));
    result.detail = f->detail;
    return result;
  }
  const auto& report = *r.report;
  if (report.taboo) {
    result.observed = "forbidden builtin";
    result.detail = "use of forbidden builtin '" + *report.taboo + "'";
    return result;
  }
  if (!report.error) {
    result.observed = "no error";
    result.detail = "program exited normally";
    return result;
  }
  result.observed = report.error->error_class;
  result.passed = report.error->error_class == wanted;
  result.detail = result.passed ? "" : "raised " + report.error->describe();
  return result;
}

std::vector<TestResult> Grader::run_custom_checker(const dsl::ExerciseSpec& spec,
                                                   const std::string& submission,
                                                   const Round& round) const {
  HarnessJob job;
  job.precode = round.resolved_precode;
  job.student_code = submission;
  job.probes = spec.autotests;
  job.taboo = spec.taboo;
  job.checker = spec.checker;
  job.random_seed = round.seed;
  const HarnessRun r = run(std::move(job));

  if (auto f = infrastructure_failure(r)) {
    if (f->verdict == Verdict::GraderError) throw GraderError(f->detail);
    return {{"program", "", std::string(to_string(f->verdict)), false, f->detail}};
  }
  const auto& report = *r.report;
  if (auto f = student_failure(report)) {
    return {{"program", "", std::string(to_string(f->verdict)), false, f->detail}};
  }
  if (report.checks.empty()) throw GraderError("custom checker reported no result");

  std::vector<TestResult> results;
  for (std::size_t i = 0; i < report.checks.size(); ++i) {
    const auto& check = report.checks[i];
    results.push_back({"check #" + std::to_string(i + 1), "accepted",
                       check.passed ? "accepted" : "rejected", check.passed, check.message});
  }
  return results;
}

HarnessRun Grader::trial_run(const dsl::ExerciseSpec& spec, const std::string& submission,
                             const std::optional<std::string>& stdin_text,
                             const std::optional<std::string>& call_args,
                             std::uint64_t seed) const {
  HarnessJob job;
  job.precode = spec.precode;
  job.student_code = submission;
  job.taboo = spec.taboo;
  job.random_seed = round_seed(seed, 0);
  job.stdin_block = stdin_text;
  if (call_args && !spec.autotests.empty()) {
    job.probes = {callee_of(spec.autotests.front()) + "(" + *call_args + ")"};
  }
  return run(std::move(job));
}

GradeReport Grader::grade(const dsl::ExerciseSpec& spec, const std::string& submission,
                          std::uint64_t master_seed) const {
  const auto issues = dsl::validate_spec(spec);
  if (dsl::has_errors(issues)) {
    std::string messages;
    for (const auto& issue : issues) {
      if (issue.is_error()) messages += (messages.empty() ? "" : "; ") + issue.message;
    }
    return grader_error_report("exercise does not validate: " + messages);
  }

  const GradingMode mode = spec.mode();
  if (mode == GradingMode::Scramble) {
    std::vector<std::string> lines;
    for (auto& line : text::split(submission, '\n')) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!text::trim(line).empty()) lines.push_back(std::move(line));
    }
    return scramble::judge_order(spec, lines);
  }

  GradeReport report;
  if (spec.max_edit) {
    const std::size_t limit = *spec.max_edit;
    if (levenshtein_bounded(submission, spec.initial_code.value_or(""), limit) > limit) {
      report.verdict = Verdict::ConstraintViolation;
      report.constraint_notes.push_back("more than " + std::to_string(limit) +
                                        " characters changed from the starting code");
      report.summary = summary_for(report.verdict);
      return report;
    }
  }

  TestPlan plan;
  try {
    plan = build_test_plan(spec, master_seed);
  } catch (const GraderError& e) {
    return grader_error_report(e.what());
  }

  report.verdict = Verdict::Correct;
  const auto stop_round = [&](RoundResults& round, const Failure& f, std::string label) {
    round.results.push_back({std::move(label), "", std::string(to_string(f.verdict)), false,
                             f.detail});
    if (f.verdict == Verdict::ConstraintViolation) report.constraint_notes.push_back(f.detail);
    report.verdict = f.verdict;
    report.failed_round = round.round;
  };

  for (const auto& round : plan.rounds) {
    RoundResults results;
    results.round = round.index + 1;
    bool terminal = false;

    switch (mode) {
      case GradingMode::VariableCheck:
      case GradingMode::FunctionCheck: {
        HarnessJob job;
        job.precode = round.resolved_precode;
        job.student_code = submission;
        job.probes = spec.autotests;
        job.taboo = spec.taboo;
        job.random_seed = round.seed;
        const HarnessRun r = run(std::move(job));
        std::optional<Failure> f = infrastructure_failure(r);
        if (!f) f = student_failure(*r.report);
        if (!f && r.report->probes.size() != round.expected.size()) {
          f = Failure{Verdict::GraderError, "harness returned the wrong number of autotest values"};
        }
        if (f) {
          stop_round(results, *f, "program");
          terminal = true;
          break;
        }
        for (std::size_t i = 0; i < round.expected.size(); ++i) {
          const auto& want = round.expected[i];
          const auto& got = r.report->probes[i];
          TestResult t;
          t.label = want.label;
          t.expected = want.rendered;
          if (got.ok) {
            t.observed = got.rendered;
            t.passed = values_equal(want.value, got.value);
          } else {
            t.observed = "error";
            t.detail = student_error_detail(*got.error);
          }
          results.results.push_back(std::move(t));
        }
        break;
      }
      case GradingMode::StdIO: {
        for (const auto& want : round.expected) {
          HarnessJob job;
          job.precode = round.resolved_precode;
          job.student_code = submission;
          job.taboo = spec.taboo;
          job.stdin_block = want.stdin_block;
          job.random_seed = round.seed;
          const HarnessRun r = run(std::move(job));
          std::optional<Failure> f = infrastructure_failure(r);
          if (!f) f = student_failure(*r.report);
          if (f) {
            stop_round(results, *f, want.label);
            terminal = true;
            break;
          }
          TestResult t;
          t.label = want.label;
          t.expected = want.rendered;
          t.observed = text::normalize_output(r.report->stdout_text);
          t.passed = t.observed == t.expected;
          if (r.report->stdout_truncated) t.detail = "output truncated";
          results.results.push_back(std::move(t));
        }
        break;
      }
      case GradingMode::RequiredError: {
        TestResult t = run_required_error(spec, submission, round);
        const auto observed_verdict = verdict_from_string(t.observed);
        if (!t.passed && observed_verdict &&
            (*observed_verdict == Verdict::TimeLimit || *observed_verdict == Verdict::GraderError ||
             *observed_verdict == Verdict::RuntimeError)) {
          stop_round(results, {*observed_verdict, t.detail}, t.label);
          terminal = true;
        } else if (!t.passed && t.observed == "forbidden builtin") {
          stop_round(results, {Verdict::ConstraintViolation, t.detail}, t.label);
          terminal = true;
        } else {
          results.results.push_back(std::move(t));
        }
        break;
      }
      case GradingMode::CustomChecker: {
        try {
          auto checks = run_custom_checker(spec, submission, round);
          const auto v = checks.size() == 1 ? verdict_from_string(checks[0].observed) : std::nullopt;
          if (v && checks[0].label == "program") {
            const auto note = checks[0].detail;
            stop_round(results, {*v, note}, "program");
            terminal = true;
          } else {
            results.results = std::move(checks);
          }
        } catch (const GraderError& e) {
          return grader_error_report(e.what());
        }
        break;
      }
      case GradingMode::Scramble:
        break;
    }

    if (!terminal) {
      const bool all_passed = std::all_of(results.results.begin(), results.results.end(),
                                          [](const TestResult& t) { return t.passed; });
      if (!all_passed && severity(Verdict::Incorrect) > severity(report.verdict)) {
        report.verdict = Verdict::Incorrect;
        report.failed_round = results.round;
      }
    }
    report.rounds.push_back(std::move(results));
    if (terminal) break;
  }

  report.summary = summary_for(report.verdict);
  if (report.verdict == Verdict::GraderError && report.failed_round) {
    report.summary += " (round " + std::to_string(*report.failed_round) + ")";
  }
  return report;
}

}  // namespace pybox::grader

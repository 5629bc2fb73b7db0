// authorctl: validate, grade and self-check exercises; regrade stored
// submissions; print usage statistics.
//
// Exit status: 0 success, 1 validation or grading failure, 2 usage error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "pybox/dsl/exercise_spec.hpp"
#include "pybox/grader/grader.hpp"
#include "pybox/grader/selfcheck.hpp"
#include "pybox/store/store.hpp"

namespace {

using namespace pybox;

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kUsage = 2;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uint64_t fresh_seed() {
  std::random_device rd;
  return (std::uint64_t{rd()} << 32) | rd();
}

struct LimitFlags {
  double cpu = 1.0;
  double wall = 0;  // 0: twice the CPU limit
  std::string python = PYBOX_PYTHON;

  void add_to(CLI::App* app) {
    app->add_option("--cpu-limit", cpu, "CPU seconds per run")->check(CLI::PositiveNumber);
    app->add_option("--wall-limit", wall, "wall seconds per run (default 2x CPU)");
    app->add_option("--python", python, "interpreter inside the sandbox");
  }

  grader::Grader make() const {
    grader::GraderOptions opts;
    opts.policy = sandbox::SandboxPolicy::with_cpu_limit(cpu);
    if (wall > 0) opts.policy.wall_time_limit = wall;
    opts.python = python;
    return grader::Grader(opts);
  }
};

int cmd_validate(const std::vector<std::string>& files) {
  int status = kOk;
  for (const auto& file : files) {
    try {
      const auto spec = dsl::load_spec_file(file, dsl::ParseMode::Strict);
      const auto issues = dsl::validate_spec(spec);
      if (issues.empty()) {
        std::cout << file << ": OK (" << dsl::to_string(spec.mode()) << ")\n";
      }
      for (const auto& issue : issues) {
        std::cout << file << ": " << (issue.is_error() ? "error: " : "warning: ")
                  << issue.message << "\n";
      }
      if (dsl::has_errors(issues)) status = kFailed;
    } catch (const std::exception& e) {
      std::cout << file << ": error: " << e.what() << "\n";
      status = kFailed;
    }
  }
  return status;
}

int cmd_grade(const std::string& spec_file, const std::string& solution_file,
              std::optional<std::uint64_t> seed, bool json, const LimitFlags& limits) {
  dsl::ExerciseSpec spec;
  std::string code;
  try {
    spec = dsl::load_spec_file(spec_file, dsl::ParseMode::Strict);
    code = read_file(solution_file);
  } catch (const std::exception& e) {
    std::cerr << "authorctl: " << e.what() << "\n";
    return kFailed;
  }
  const auto report = limits.make().grade(spec, code, seed.value_or(fresh_seed()));
  if (json) {
    std::cout << grader::to_json(report).dump(2) << "\n";
  } else {
    std::cout << grader::render_text(report);
  }
  return report.correct() ? kOk : kFailed;
}

int cmd_selfcheck(const std::string& dir, std::optional<std::uint64_t> seed, unsigned jobs,
                  const LimitFlags& limits) {
  if (!std::filesystem::is_directory(dir)) {
    std::cerr << "authorctl: " << dir << " is not a directory\n";
    return kUsage;
  }
  const auto grader = limits.make();
  const auto results = grader::selfcheck(dir, grader, seed.value_or(fresh_seed()), jobs);
  if (results.empty()) {
    std::cout << "warning: no " << dsl::kSpecExtension << " files in " << dir << "\n";
    return kOk;
  }
  std::size_t passed = 0;
  for (const auto& r : results) {
    std::printf("%s %-20s %6.2fs  %s\n", r.passed ? "PASS" : "FAIL", r.exercise_id.c_str(),
                r.seconds, r.message.c_str());
    passed += r.passed;
  }
  std::printf("%zu/%zu exercises pass their own solver\n", passed, results.size());
  return passed == results.size() ? kOk : kFailed;
}

int cmd_stats(const std::string& store_path, const std::string& csv_path) {
  store::StoreOptions opts;
  opts.path = store_path;
  store::Store db(opts);
  const auto report = db.stats_report();
  if (csv_path.empty()) {
    std::cout << store::stats_text(report);
    return kOk;
  }
  const auto csv = store::stats_csv(report);
  if (csv_path == "-") {
    std::cout << csv;
    return kOk;
  }
  std::ofstream out(csv_path, std::ios::binary);
  out << csv;
  if (!out) {
    std::cerr << "authorctl: cannot write " << csv_path << "\n";
    return kFailed;
  }
  return kOk;
}

// Stored submissions are never modified; regrading only reports drift.
int cmd_regrade(const std::string& store_path, const std::string& dir,
                std::optional<std::uint64_t> seed, const LimitFlags& limits) {
  store::StoreOptions opts;
  opts.path = store_path;
  store::Store db(opts);
  std::map<std::string, dsl::ExerciseSpec> specs;
  for (const auto& path : dsl::list_spec_files(dir)) {
    specs[path.stem().string()] = dsl::load_spec_file(path, dsl::ParseMode::Lenient);
  }
  const auto grader = limits.make();
  int status = kOk;
  for (const auto& sub : db.all_submissions()) {
    const auto it = specs.find(sub.exercise_id);
    if (it == specs.end()) {
      std::cout << sub.submission_id << " " << sub.exercise_id << ": exercise not found\n";
      status = kFailed;
      continue;
    }
    const auto report = grader.grade(it->second, sub.code, seed.value_or(fresh_seed()));
    const bool same = report.verdict == sub.report.verdict;
    std::cout << sub.submission_id << " " << sub.user_id << " " << sub.exercise_id << ": "
              << grader::to_string(sub.report.verdict) << " -> "
              << grader::to_string(report.verdict) << (same ? "" : "  CHANGED") << "\n";
    if (!same) status = kFailed;
  }
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Exercise authoring and operations tool"};
  app.require_subcommand(1);

  std::vector<std::string> validate_files;
  auto* validate = app.add_subcommand("validate", "check exercise files");
  validate->add_option("files", validate_files)->required();

  std::string spec_file, solution_file;
  std::optional<std::uint64_t> seed;
  bool json = false;
  LimitFlags limits;
  auto* grade = app.add_subcommand("grade", "grade a solution file against an exercise");
  grade->add_option("spec", spec_file)->required();
  grade->add_option("solution", solution_file)->required();
  grade->add_option("--seed", seed, "master seed (random if omitted)");
  grade->add_flag("--json", json, "print the report as JSON");
  limits.add_to(grade);

  std::string dir;
  unsigned jobs = std::max(1u, std::min(4u, std::thread::hardware_concurrency()));
  auto* self = app.add_subcommand("selfcheck", "grade every exercise with its own solver");
  self->add_option("dir", dir)->required();
  self->add_option("--seed", seed, "master seed (random if omitted)");
  self->add_option("--jobs", jobs, "parallel gradings")->check(CLI::Range(1u, 4u));
  limits.add_to(self);

  std::string store_path, csv_path;
  auto* stats = app.add_subcommand("stats", "usage statistics from a store");
  stats->add_option("--store", store_path, "store file")->required();
  stats->add_option("--csv", csv_path, "write CSV (series,key,value) to a file, - for stdout");

  auto* regrade = app.add_subcommand("regrade", "regrade stored submissions and report changes");
  regrade->add_option("--store", store_path, "store file")->required();
  regrade->add_option("--exercises", dir, "exercise directory")->required();
  regrade->add_option("--seed", seed, "master seed (random if omitted)");
  limits.add_to(regrade);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*validate) return cmd_validate(validate_files);
    if (*grade) return cmd_grade(spec_file, solution_file, seed, json, limits);
    if (*self) return cmd_selfcheck(dir, seed, jobs, limits);
    if (*stats) return cmd_stats(store_path, csv_path);
    if (*regrade) return cmd_regrade(store_path, dir, seed, limits);
  } catch (const std::exception& e) {
    std::cerr << "authorctl: " << e.what() << "\n";
    return kFailed;
  }
  return kUsage;
}

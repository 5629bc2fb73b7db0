#include "pybox/grader/selfcheck.hpp"

#include <atomic>
#include <chrono>
#include <thread>

#include "pybox/common/text.hpp"

namespace pybox::grader {

std::optional<std::string> reference_submission(const dsl::ExerciseSpec& spec) {
  if (spec.mode() == dsl::GradingMode::Scramble) return text::join(spec.scramble_lines, "\n");
  return spec.solver;
}

namespace {

SelfcheckEntry check_one(const std::filesystem::path& path, const Grader& grader,
                         std::uint64_t master_seed) {
  SelfcheckEntry entry;
  entry.path = path;
  entry.exercise_id = path.stem().string();
  const auto start = std::chrono::steady_clock::now();
  try {
    const auto spec = dsl::load_spec_file(path, dsl::ParseMode::Strict);
    const auto issues = dsl::validate_spec(spec);
    if (dsl::has_errors(issues)) {
      for (const auto& i : issues) {
        if (i.is_error()) entry.message += (entry.message.empty() ? "" : "; ") + i.message;
      }
    } else if (auto code = reference_submission(spec)) {
      entry.report = grader.grade(spec, *code, master_seed);
      entry.passed = entry.report->correct();
      entry.message = std::string(to_string(entry.report->verdict));
      if (!entry.passed && !entry.report->summary.empty()) {
        entry.message += ": " + entry.report->summary;
      }
    } else {
      entry.message = "no solver to check";
    }
  } catch (const std::exception& e) {
    entry.message = e.what();
  }
  entry.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return entry;
}

}  // namespace

std::vector<SelfcheckEntry> selfcheck(const std::filesystem::path& dir, const Grader& grader,
                                      std::uint64_t master_seed, unsigned jobs) {
  const auto files = dsl::list_spec_files(dir);
  std::vector<SelfcheckEntry> out(files.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < files.size(); i = next++) {
      out[i] = check_one(files[i], grader, master_seed);
    }
  };
  std::vector<std::thread> pool;
  for (unsigned j = 1; j < std::max(1u, jobs); ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return out;
}

}  // namespace pybox::grader

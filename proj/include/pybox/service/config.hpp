#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pybox/sandbox/sandbox.hpp"

namespace pybox::service {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::filesystem::path store_path = "pybox.db";
  std::filesystem::path exercise_dir = "exercises";
  sandbox::SandboxPolicy policy;
  std::string python = PYBOX_PYTHON;
  std::vector<std::string> staff;
  unsigned max_jobs = 4;           // concurrent sandbox jobs, queued beyond
  unsigned max_jobs_per_user = 1;  // 429 beyond
  std::int64_t session_ttl_seconds = 7 * 24 * 3600;
  // Honors ?seed= on submit and descriptor requests. Never enable in production.
  bool test_mode = false;
};

// Reads a JSON config file. Unknown keys are errors so typos surface.
// Throws std::runtime_error with the offending key or value.
ServiceConfig load_config(const std::filesystem::path& path);
ServiceConfig config_from_json(const std::string& text);

// Applies PYBOX_* environment overrides; getenv is injectable for tests.
void apply_env_overrides(ServiceConfig& config,
                         const std::function<std::optional<std::string>(const char*)>& getenv);
void apply_env_overrides(ServiceConfig& config);

}  // namespace pybox::service

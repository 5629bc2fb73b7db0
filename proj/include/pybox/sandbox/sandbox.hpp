#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pybox::sandbox {

// Resource limits for one run. Network access is always denied and the only
// writable location is the run's private scratch directory.
struct SandboxPolicy {
  double cpu_time_limit = 1.0;          // seconds
  double wall_time_limit = 2.0;         // seconds, >= cpu_time_limit
  std::uint64_t memory_limit = 64ull << 20;  // bytes of address space
  std::uint64_t output_cap = 64ull << 10;    // bytes per stream
  std::uint32_t process_limit = 1;
  std::uint64_t file_size_limit = 1ull << 20;  // largest file the child may write

  // Paths the child may read (and execute) besides its scratch directory:
  // the interpreter and its standard library.
  std::vector<std::filesystem::path> readable_paths = {
      "/usr", "/lib", "/lib64", "/bin", "/etc/ld.so.cache", "/etc/localtime",
      "/dev/null", "/dev/urandom", "/dev/zero",
  };

  // Parent directory for scratch directories; empty means the system temp dir.
  std::filesystem::path scratch_root;

  // Policy with the given CPU limit and the default 2x wall allowance.
  static SandboxPolicy with_cpu_limit(double seconds);

  // Throws std::invalid_argument if a limit is nonpositive or wall < cpu.
  void validate() const;
};

// Seconds between a limit expiring and the forced kill being observable.
inline constexpr double kGraceSeconds = 0.5;

enum class Status { Ok, TimeLimit, MemoryLimit, OutputLimit, RuntimeError, SandboxError };

std::string_view to_string(Status s);

struct File {
  std::string name;  // plain file name, placed at the top of the scratch dir
  std::string contents;
};

struct Bundle {
  std::vector<File> files;
  std::vector<std::string> argv;  // argv[0] is resolved against PATH
};

struct ExecutionOutcome {
  Status status = Status::SandboxError;
  std::string stdout_data;
  std::string stderr_data;
  bool stdout_truncated = false;
  bool stderr_truncated = false;
  std::optional<int> exit_code;
  std::optional<int> signal;
  double cpu_used = 0;
  double wall_used = 0;
  std::string error;  // host-side failure description for SandboxError

  // "exit 0", "signal 9 (Killed)", ...
  std::string termination() const;
};

// What isolation this host actually provides. Execution still proceeds when a
// mechanism is unavailable; callers that need a guarantee check here first.
struct Capabilities {
  bool filesystem_confinement = false;  // reads outside allowed paths fail
  bool network_namespace = false;
  bool syscall_filter = false;
};

Capabilities probe_capabilities();

// Runs bundle.argv inside a fresh scratch directory holding bundle.files.
// Returns once the child and everything it spawned are gone and the scratch
// directory is removed. Never throws for student-program failures; host
// failures come back as Status::SandboxError.
ExecutionOutcome execute(const Bundle& bundle, const SandboxPolicy& policy,
                         std::string_view stdin_data = {});

}  // namespace pybox::sandbox

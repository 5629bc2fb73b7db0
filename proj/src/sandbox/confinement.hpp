#pragma once

// Kernel-level confinement applied in the forked child between fork() and
// execve(). Everything here that runs in the child uses raw syscalls only,
// since the parent may be multithreaded.

#include <linux/filter.h>

#include <cstdint>
#include <string>
#include <vector>

namespace pybox::sandbox::detail {

struct LandlockPlan {
  struct Rule {
    std::string path;
    std::uint64_t access;
  };
  int abi = 0;
  std::uint64_t handled_fs = 0;
  std::uint64_t handled_net = 0;
  std::uint64_t scoped = 0;
  std::vector<Rule> rules;
};

int landlock_abi();

// Read/execute on `readable`, full access below `scratch`. Paths that do not
// exist are skipped. Returns a plan with abi == 0 when Landlock is missing.
LandlockPlan plan_landlock(const std::vector<std::string>& readable, const std::string& scratch);

// Child side. Returns false if the ruleset could not be enforced.
bool apply_landlock(const LandlockPlan& plan) noexcept;

// Socket families other than AF_UNIX, kernel-management calls, tracing and,
// when forbid_spawn is set, every way of creating a process fail with errno.
std::vector<sock_filter> build_seccomp_filter(bool forbid_spawn);

// Child side. Requires PR_SET_NO_NEW_PRIVS already set.
bool apply_seccomp(const std::vector<sock_filter>& program) noexcept;

}  // namespace pybox::sandbox::detail

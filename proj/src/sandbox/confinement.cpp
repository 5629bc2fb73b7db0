#include "confinement.hpp"

#include <fcntl.h>
#include <linux/audit.h>
#include <linux/seccomp.h>
#include <sys/prctl.h>
#include <sys/socket.h>
#include <sys/stat.h>
#include <sys/syscall.h>
#include <unistd.h>

#include <cerrno>
#include <cstddef>

namespace pybox::sandbox::detail {

namespace {

// Landlock UAPI. The system headers may predate the newer ABI versions, so
// the values are spelled out here.
constexpr std::uint32_t kCreateRulesetVersion = 1U << 0;
constexpr int kRulePathBeneath = 1;

constexpr std::uint64_t kFsExecute = 1ULL << 0;
constexpr std::uint64_t kFsWriteFile = 1ULL << 1;
constexpr std::uint64_t kFsReadFile = 1ULL << 2;
constexpr std::uint64_t kFsReadDir = 1ULL << 3;
constexpr std::uint64_t kFsAbiV1 = (1ULL << 13) - 1;  // bits 0..12
constexpr std::uint64_t kFsRefer = 1ULL << 13;        // ABI 2
constexpr std::uint64_t kFsTruncate = 1ULL << 14;     // ABI 3
constexpr std::uint64_t kFsIoctlDev = 1ULL << 15;     // ABI 5
constexpr std::uint64_t kNetBindTcp = 1ULL << 0;      // ABI 4
constexpr std::uint64_t kNetConnectTcp = 1ULL << 1;   // ABI 4
constexpr std::uint64_t kScopeAbstractUnix = 1ULL << 0;  // ABI 6
constexpr std::uint64_t kScopeSignal = 1ULL << 1;        // ABI 6

// Rights that are meaningful on a regular file rule.
constexpr std::uint64_t kFileRights = kFsExecute | kFsWriteFile | kFsReadFile | kFsTruncate |
                                      kFsIoctlDev;

struct RulesetAttr {
  std::uint64_t handled_access_fs;
  std::uint64_t handled_access_net;
  std::uint64_t scoped;
};

struct __attribute__((packed)) PathBeneathAttr {
  std::uint64_t allowed_access;
  std::int32_t parent_fd;
};

#if defined(__x86_64__)
constexpr std::uint32_t kAuditArch = AUDIT_ARCH_X86_64;
#elif defined(__aarch64__)
constexpr std::uint32_t kAuditArch = AUDIT_ARCH_AARCH64;
#else
#error "unsupported architecture for the syscall filter"
#endif

sock_filter stmt(std::uint16_t code, std::uint32_t k) { return BPF_STMT(code, k); }
sock_filter jump(std::uint16_t code, std::uint32_t k, std::uint8_t jt, std::uint8_t jf) {
  return BPF_JUMP(code, k, jt, jf);
}

}  // namespace

int landlock_abi() {
  const long abi = syscall(SYS_landlock_create_ruleset, nullptr, 0, kCreateRulesetVersion);
  return abi < 0 ? 0 : static_cast<int>(abi);
}

LandlockPlan plan_landlock(const std::vector<std::string>& readable, const std::string& scratch) {
  LandlockPlan plan;
  plan.abi = landlock_abi();
  if (plan.abi <= 0) return plan;

  plan.handled_fs = kFsAbiV1;
  if (plan.abi >= 2) plan.handled_fs |= kFsRefer;
  if (plan.abi >= 3) plan.handled_fs |= kFsTruncate;
  if (plan.abi >= 5) plan.handled_fs |= kFsIoctlDev;
  if (plan.abi >= 4) plan.handled_net = kNetBindTcp | kNetConnectTcp;
  if (plan.abi >= 6) plan.scoped = kScopeAbstractUnix | kScopeSignal;

  const auto add = [&](const std::string& path, std::uint64_t access) {
    struct stat st {};
    if (::stat(path.c_str(), &st) != 0) return;
    if (!S_ISDIR(st.st_mode)) access &= kFileRights;
    plan.rules.push_back({path, access & plan.handled_fs});
  };
  for (const auto& path : readable) {
    std::uint64_t access = kFsExecute | kFsReadFile | kFsReadDir;
    if (path == "/dev/null") access |= kFsWriteFile;
    add(path, access);
  }
  add(scratch, plan.handled_fs);
  return plan;
}

bool apply_landlock(const LandlockPlan& plan) noexcept {
  if (plan.abi <= 0) return false;
  RulesetAttr attr{plan.handled_fs, plan.handled_net, plan.scoped};
  const std::size_t size = plan.abi >= 6   ? sizeof(RulesetAttr)
                           : plan.abi >= 4 ? offsetof(RulesetAttr, scoped)
                                           : offsetof(RulesetAttr, handled_access_net);
  const long ruleset = syscall(SYS_landlock_create_ruleset, &attr, size, 0U);
  if (ruleset < 0) return false;
  for (const auto& rule : plan.rules) {
    const int fd = ::open(rule.path.c_str(), O_PATH | O_CLOEXEC);
    if (fd < 0) continue;
    PathBeneathAttr beneath{rule.access, fd};
    syscall(SYS_landlock_add_rule, ruleset, kRulePathBeneath, &beneath, 0U);
    ::close(fd);
  }
  const bool ok = syscall(SYS_landlock_restrict_self, ruleset, 0U) == 0;
  ::close(static_cast<int>(ruleset));
  return ok;
}

std::vector<sock_filter> build_seccomp_filter(bool forbid_spawn) {
  const auto errno_ret = [](int err) {
    return SECCOMP_RET_ERRNO | (static_cast<std::uint32_t>(err) & SECCOMP_RET_DATA);
  };

  std::vector<int> denied = {
      SYS_ptrace, SYS_mount, SYS_umount2, SYS_pivot_root, SYS_chroot, SYS_unshare, SYS_setns,
      SYS_kexec_load, SYS_init_module, SYS_finit_module, SYS_delete_module, SYS_reboot,
      SYS_swapon, SYS_swapoff, SYS_bpf, SYS_perf_event_open, SYS_keyctl, SYS_add_key,
      SYS_request_key, SYS_userfaultfd, SYS_process_vm_readv, SYS_process_vm_writev,
      SYS_io_uring_setup,
      // Descendants must stay in the process group the supervisor kills.
      SYS_setsid, SYS_setpgid,
  };
  std::vector<int> spawn;
  if (forbid_spawn) {
    spawn = {SYS_clone, SYS_clone3};
#ifdef SYS_fork
    spawn.push_back(SYS_fork);
#endif
#ifdef SYS_vfork
    spawn.push_back(SYS_vfork);
#endif
  }

  std::vector<sock_filter> prog;
  prog.push_back(stmt(BPF_LD | BPF_W | BPF_ABS, offsetof(seccomp_data, arch)));
  prog.push_back(jump(BPF_JMP | BPF_JEQ | BPF_K, kAuditArch, 1, 0));
  prog.push_back(stmt(BPF_RET | BPF_K, SECCOMP_RET_KILL_PROCESS));
  prog.push_back(stmt(BPF_LD | BPF_W | BPF_ABS, offsetof(seccomp_data, nr)));
#if defined(__x86_64__)
  // x32 ABI numbers alias the native table; refuse them outright.
  prog.push_back(jump(BPF_JMP | BPF_JGE | BPF_K, 0x40000000U, 0, 1));
  prog.push_back(stmt(BPF_RET | BPF_K, errno_ret(ENOSYS)));
#endif

  for (int nr : denied) {
    prog.push_back(jump(BPF_JMP | BPF_JEQ | BPF_K, static_cast<std::uint32_t>(nr), 0, 1));
    prog.push_back(stmt(BPF_RET | BPF_K, errno_ret(EPERM)));
  }
  for (int nr : spawn) {
    // clone3 gets ENOSYS so libc falls back to clone, which then fails too.
    const int err = nr == SYS_clone3 ? ENOSYS : EAGAIN;
    prog.push_back(jump(BPF_JMP | BPF_JEQ | BPF_K, static_cast<std::uint32_t>(nr), 0, 1));
    prog.push_back(stmt(BPF_RET | BPF_K, errno_ret(err)));
  }

  // socket(domain, ...): only AF_UNIX.
  prog.push_back(jump(BPF_JMP | BPF_JEQ | BPF_K, SYS_socket, 0, 4));
  prog.push_back(stmt(BPF_LD | BPF_W | BPF_ABS, offsetof(seccomp_data, args[0])));
  prog.push_back(jump(BPF_JMP | BPF_JEQ | BPF_K, AF_UNIX, 0, 1));
  prog.push_back(stmt(BPF_RET | BPF_K, SECCOMP_RET_ALLOW));
  prog.push_back(stmt(BPF_RET | BPF_K, errno_ret(EAFNOSUPPORT)));

  prog.push_back(stmt(BPF_RET | BPF_K, SECCOMP_RET_ALLOW));
  return prog;
}

bool apply_seccomp(const std::vector<sock_filter>& program) noexcept {
  sock_fprog fprog{};
  fprog.len = static_cast<unsigned short>(program.size());
  fprog.filter = const_cast<sock_filter*>(program.data());
  return ::prctl(PR_SET_SECCOMP, SECCOMP_MODE_FILTER, &fprog, 0, 0) == 0;
}

}  // namespace pybox::sandbox::detail

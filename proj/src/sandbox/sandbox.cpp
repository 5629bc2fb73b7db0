#include "pybox/sandbox/sandbox.hpp"

#include <fcntl.h>
#include <poll.h>
#include <sched.h>
#include <signal.h>
#include <sys/prctl.h>
#include <sys/resource.h>
#include <sys/stat.h>
#include <sys/syscall.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <sstream>
#include <system_error>
#include <utility>

#include "confinement.hpp"

namespace pybox::sandbox {

namespace {

using Clock = std::chrono::steady_clock;

std::atomic<std::uint64_t> g_scratch_counter{0};

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    reset();
    fd_ = std::exchange(o.fd_, -1);
    return *this;
  }
  ~Fd() { reset(); }

  int get() const { return fd_; }
  explicit operator bool() const { return fd_ >= 0; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

struct Pipe {
  Fd read;
  Fd write;
};

Pipe make_pipe() {
  int fds[2];
  if (::pipe2(fds, O_CLOEXEC) != 0) {
    throw std::system_error(errno, std::generic_category(), "pipe2");
  }
  return {Fd(fds[0]), Fd(fds[1])};
}

// Scratch directory removed on scope exit.
class ScratchDir {
 public:
  explicit ScratchDir(const std::filesystem::path& root) {
    const auto base = root.empty() ? std::filesystem::temp_directory_path() / "pybox" : root;
    std::filesystem::create_directories(base);
    const auto n = g_scratch_counter.fetch_add(1, std::memory_order_relaxed);
    std::string tmpl = (base / ("run-" + std::to_string(::getpid()) + "-" + std::to_string(n) +
                                "-XXXXXX"))
                           .string();
    if (::mkdtemp(tmpl.data()) == nullptr) {
      throw std::system_error(errno, std::generic_category(), "mkdtemp " + tmpl);
    }
    path_ = tmpl;
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

std::string resolve_program(const std::string& name) {
  if (name.find('/') != std::string::npos) return name;
  for (const char* dir : {"/usr/local/bin", "/usr/bin", "/bin"}) {
    const auto candidate = std::filesystem::path(dir) / name;
    if (::access(candidate.c_str(), X_OK) == 0) return candidate.string();
  }
  return {};
}

double cpu_seconds_of(pid_t pid) {
  std::ifstream in("/proc/" + std::to_string(pid) + "/stat");
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto close_paren = content.rfind(')');
  if (close_paren == std::string::npos) return 0;
  std::istringstream fields(content.substr(close_paren + 2));
  std::string field;
  unsigned long long utime = 0, stime = 0;
  // Fields after the command name start at field 3 (state); utime is 14.
  for (int i = 3; i <= 15 && fields >> field; ++i) {
    if (i == 14) utime = std::stoull(field);
    if (i == 15) stime = std::stoull(field);
  }
  static const long ticks = ::sysconf(_SC_CLK_TCK);
  return static_cast<double>(utime + stime) / static_cast<double>(ticks);
}

double seconds(const timeval& tv) { return tv.tv_sec + tv.tv_usec / 1e6; }

// Everything the child needs, prepared before fork so the child only makes
// async-signal-safe calls.
struct ChildSetup {
  std::string program;
  std::vector<std::string> argv_storage;
  std::vector<char*> argv;
  std::vector<std::string> env_storage;
  std::vector<char*> envp;
  std::string scratch;
  detail::LandlockPlan landlock;
  std::vector<sock_filter> seccomp;
  SandboxPolicy policy;
};

enum ChildStage : int { kStageDup = 1, kStageChdir, kStageRlimit, kStageNoNewPrivs, kStageSeccomp,
                        kStageExec };

struct ChildFailure {
  int stage;
  int err;
};

[[noreturn]] void child_fail(int report_fd, int stage) {
  ChildFailure f{stage, errno};
  [[maybe_unused]] auto n = ::write(report_fd, &f, sizeof f);
  ::_exit(127);
}

void set_limit(int report_fd, int resource, rlim_t soft, rlim_t hard) {
  rlimit rl{soft, hard};
  if (::setrlimit(resource, &rl) != 0) child_fail(report_fd, kStageRlimit);
}

[[noreturn]] void run_child(const ChildSetup& setup, int in_fd, int out_fd, int err_fd,
                            int report_fd, pid_t parent) {
  ::setsid();
  ::prctl(PR_SET_PDEATHSIG, SIGKILL);
  if (::getppid() != parent) ::_exit(127);
  ::signal(SIGPIPE, SIG_DFL);

  if (::dup2(in_fd, 0) < 0 || ::dup2(out_fd, 1) < 0 || ::dup2(err_fd, 2) < 0) {
    child_fail(report_fd, kStageDup);
  }
  if (report_fd != 3) {
    if (::dup3(report_fd, 3, O_CLOEXEC) < 0) child_fail(report_fd, kStageDup);
    report_fd = 3;
  }
  if (::syscall(SYS_close_range, 4U, ~0U, 0U) != 0) {
    for (int fd = 4; fd < 1024; ++fd) ::close(fd);
  }
  if (::chdir(setup.scratch.c_str()) != 0) child_fail(report_fd, kStageChdir);

  const auto& p = setup.policy;
  const auto cpu_hard = static_cast<rlim_t>(std::ceil(p.cpu_time_limit)) + 1;
  set_limit(report_fd, RLIMIT_CPU, cpu_hard, cpu_hard);
  set_limit(report_fd, RLIMIT_AS, p.memory_limit, p.memory_limit);
  set_limit(report_fd, RLIMIT_FSIZE, p.file_size_limit, p.file_size_limit);
  set_limit(report_fd, RLIMIT_CORE, 0, 0);
  set_limit(report_fd, RLIMIT_NOFILE, 64, 64);
  if (p.process_limit > 1) set_limit(report_fd, RLIMIT_NPROC, p.process_limit, p.process_limit);

  // Best effort: an empty network namespace. Without privilege the syscall
  // filter and Landlock TCP rules still refuse network sockets.
  ::unshare(CLONE_NEWNET);

  if (::prctl(PR_SET_NO_NEW_PRIVS, 1, 0, 0, 0) != 0) child_fail(report_fd, kStageNoNewPrivs);
  detail::apply_landlock(setup.landlock);
  if (!detail::apply_seccomp(setup.seccomp)) child_fail(report_fd, kStageSeccomp);

  ::execve(setup.program.c_str(), setup.argv.data(), setup.envp.data());
  child_fail(report_fd, kStageExec);
}

const char* stage_name(int stage) {
  switch (stage) {
    case kStageDup: return "redirecting standard streams";
    case kStageChdir: return "entering scratch directory";
    case kStageRlimit: return "applying resource limits";
    case kStageNoNewPrivs: return "setting no_new_privs";
    case kStageSeccomp: return "installing syscall filter";
    case kStageExec: return "executing program";
  }
  return "preparing child";
}

bool looks_like_memory_exhaustion(const ExecutionOutcome& out, long maxrss_kb,
                                  std::uint64_t limit) {
  if (static_cast<double>(maxrss_kb) * 1024.0 >= 0.9 * static_cast<double>(limit)) return true;
  for (const char* marker : {"MemoryError", "std::bad_alloc", "Cannot allocate memory",
                             "out of memory"}) {
    if (out.stderr_data.find(marker) != std::string::npos) return true;
  }
  return false;
}

void ignore_sigpipe_once() {
  static std::once_flag once;
  std::call_once(once, [] { ::signal(SIGPIPE, SIG_IGN); });
}

}  // namespace

SandboxPolicy SandboxPolicy::with_cpu_limit(double seconds) {
  SandboxPolicy p;
  p.cpu_time_limit = seconds;
  p.wall_time_limit = 2 * seconds;
  return p;
}

void SandboxPolicy::validate() const {
  if (!(cpu_time_limit > 0) || !(wall_time_limit > 0) || memory_limit == 0 || output_cap == 0 ||
      process_limit == 0 || file_size_limit == 0) {
    throw std::invalid_argument("sandbox limits must be strictly positive");
  }
  if (wall_time_limit < cpu_time_limit) {
    throw std::invalid_argument("wall time limit must be at least the CPU time limit");
  }
}

std::string_view to_string(Status s) {
  switch (s) {
    case Status::Ok: return "Ok";
    case Status::TimeLimit: return "TimeLimit";
    case Status::MemoryLimit: return "MemoryLimit";
    case Status::OutputLimit: return "OutputLimit";
    case Status::RuntimeError: return "RuntimeError";
    case Status::SandboxError: return "SandboxError";
  }
  return "?";
}

std::string ExecutionOutcome::termination() const {
  if (signal) {
    const char* name = ::strsignal(*signal);
    return "signal " + std::to_string(*signal) + " (" + (name ? name : "?") + ")";
  }
  if (exit_code) return "exit " + std::to_string(*exit_code);
  return "not started";
}

Capabilities probe_capabilities() {
  static const Capabilities caps = [] {
    Capabilities c;
    c.filesystem_confinement = detail::landlock_abi() > 0;
    c.syscall_filter = ::prctl(PR_GET_SECCOMP, 0, 0, 0, 0) >= 0;
    const pid_t pid = ::fork();
    if (pid == 0) ::_exit(::unshare(CLONE_NEWNET) == 0 ? 0 : 1);
    int status = 0;
    if (pid > 0 && ::waitpid(pid, &status, 0) == pid) {
      c.network_namespace = WIFEXITED(status) && WEXITSTATUS(status) == 0;
    }
    return c;
  }();
  return caps;
}

ExecutionOutcome execute(const Bundle& bundle, const SandboxPolicy& policy,
                         std::string_view stdin_data) {
  ExecutionOutcome out;
  const auto fail = [&](std::string message) {
    out.status = Status::SandboxError;
    out.error = std::move(message);
    return out;
  };

  try {
    policy.validate();
  } catch (const std::exception& e) {
    return fail(e.what());
  }
  if (bundle.argv.empty()) return fail("empty entry command");
  ignore_sigpipe_once();

  try {
    ScratchDir scratch(policy.scratch_root);
    for (const auto& file : bundle.files) {
      if (file.name.empty() || file.name.find('/') != std::string::npos || file.name == "." ||
          file.name == "..") {
        return fail("bundle file name '" + file.name + "' is not a plain name");
      }
      std::ofstream f(scratch.path() / file.name, std::ios::binary);
      f << file.contents;
      if (!f) return fail("cannot write bundle file " + file.name);
    }

    ChildSetup setup;
    setup.policy = policy;
    setup.program = resolve_program(bundle.argv[0]);
    if (setup.program.empty()) return fail("program '" + bundle.argv[0] + "' not found");
    setup.argv_storage = bundle.argv;
    for (auto& a : setup.argv_storage) setup.argv.push_back(a.data());
    setup.argv.push_back(nullptr);
    setup.scratch = scratch.path().string();
    setup.env_storage = {"PATH=/usr/bin:/bin", "HOME=" + setup.scratch, "LANG=C.UTF-8",
                         "LC_ALL=C.UTF-8", "TMPDIR=" + setup.scratch};
    for (auto& e : setup.env_storage) setup.envp.push_back(e.data());
    setup.envp.push_back(nullptr);
    std::vector<std::string> readable;
    for (const auto& p : policy.readable_paths) readable.push_back(p.string());
    setup.landlock = detail::plan_landlock(readable, setup.scratch);
    setup.seccomp = detail::build_seccomp_filter(policy.process_limit <= 1);

    Pipe in = make_pipe();
    Pipe stdout_pipe = make_pipe();
    Pipe stderr_pipe = make_pipe();
    Pipe report = make_pipe();

    const pid_t parent = ::getpid();
    const auto started = Clock::now();
    const pid_t pid = ::fork();
    if (pid < 0) return fail(std::string("fork: ") + std::strerror(errno));
    if (pid == 0) {
      run_child(setup, in.read.get(), stdout_pipe.write.get(), stderr_pipe.write.get(),
                report.write.get(), parent);
    }
    // The child may not have called setsid yet; setpgid from this side too so
    // killpg always has a group to target.
    ::setpgid(pid, pid);

    in.read.reset();
    stdout_pipe.write.reset();
    stderr_pipe.write.reset();
    report.write.reset();

    const auto kill_group = [pid] {
      ::kill(-pid, SIGKILL);
      ::kill(pid, SIGKILL);
    };

    // EOF on the report pipe means execve succeeded (the pipe is CLOEXEC).
    ChildFailure failure{};
    ssize_t got;
    do {
      got = ::read(report.read.get(), &failure, sizeof failure);
    } while (got < 0 && errno == EINTR);
    if (got == static_cast<ssize_t>(sizeof failure)) {
      kill_group();
      int status = 0;
      ::waitpid(pid, &status, 0);
      errno = failure.err;
      return fail(std::string("sandbox setup failed while ") + stage_name(failure.stage) + ": " +
                  std::strerror(failure.err));
    }

    for (int fd : {in.write.get(), stdout_pipe.read.get(), stderr_pipe.read.get()}) {
      ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL) | O_NONBLOCK);
    }

    const auto wall_deadline =
        started + std::chrono::duration_cast<Clock::duration>(
                      std::chrono::duration<double>(policy.wall_time_limit));
    std::size_t stdin_written = 0;
    if (stdin_data.empty()) in.write.reset();

    bool wall_exceeded = false;
    bool cpu_exceeded = false;
    bool output_exceeded = false;
    bool child_exited = false;

    const auto drain = [&](Fd& fd, std::string& sink, bool& truncated) {
      char buf[65536];
      while (fd) {
        const ssize_t n = ::read(fd.get(), buf, sizeof buf);
        if (n > 0) {
          const std::size_t room = policy.output_cap - std::min<std::size_t>(sink.size(), policy.output_cap);
          sink.append(buf, std::min<std::size_t>(room, static_cast<std::size_t>(n)));
          if (static_cast<std::size_t>(n) > room) {
            truncated = true;
            output_exceeded = true;
          }
        } else if (n == 0) {
          fd.reset();
        } else if (errno == EINTR) {
          continue;
        } else {
          return;  // EAGAIN
        }
      }
    };

    Clock::time_point exited_at{};
    while (stdout_pipe.read || stderr_pipe.read || !child_exited) {
      if (child_exited && Clock::now() - exited_at > std::chrono::milliseconds(250)) {
        // A descendant outside the process group still holds a pipe.
        break;
      }
      if (!child_exited) {
        siginfo_t info{};
        if (::waitid(P_PID, pid, &info, WEXITED | WNOHANG | WNOWAIT) == 0 && info.si_pid == pid) {
          // Anything still holding the pipes open is a descendant; it dies
          // with the group so the drain below reaches EOF.
          child_exited = true;
          exited_at = Clock::now();
          kill_group();
        }
      }

      const auto now = Clock::now();
      if (!child_exited && now >= wall_deadline) {
        wall_exceeded = true;
        kill_group();
        child_exited = true;
        exited_at = now;
      }
      if (!child_exited && cpu_seconds_of(pid) > policy.cpu_time_limit) {
        cpu_exceeded = true;
        kill_group();
        child_exited = true;
        exited_at = now;
      }

      pollfd fds[3];
      nfds_t count = 0;
      for (const Fd* fd : {&stdout_pipe.read, &stderr_pipe.read}) {
        if (*fd) fds[count++] = {fd->get(), POLLIN, 0};
      }
      if (in.write) fds[count++] = {in.write.get(), POLLOUT, 0};
      const auto remaining =
          std::chrono::duration_cast<std::chrono::milliseconds>(wall_deadline - now).count();
      const int timeout = child_exited ? 10 : static_cast<int>(std::clamp<long long>(remaining, 0, 20));
      ::poll(fds, count, timeout);

      drain(stdout_pipe.read, out.stdout_data, out.stdout_truncated);
      drain(stderr_pipe.read, out.stderr_data, out.stderr_truncated);
      if (output_exceeded && !child_exited) {
        kill_group();
        child_exited = true;
        exited_at = Clock::now();
      }

      if (in.write) {
        const ssize_t n = ::write(in.write.get(), stdin_data.data() + stdin_written,
                                  stdin_data.size() - stdin_written);
        if (n > 0) stdin_written += static_cast<std::size_t>(n);
        if ((n < 0 && errno != EAGAIN && errno != EINTR) || stdin_written == stdin_data.size()) {
          in.write.reset();
        }
      }
    }

    int status = 0;
    rusage usage{};
    while (::wait4(pid, &status, 0, &usage) < 0 && errno == EINTR) {
    }
    kill_group();
    out.wall_used = std::chrono::duration<double>(Clock::now() - started).count();
    out.cpu_used = seconds(usage.ru_utime) + seconds(usage.ru_stime);

    if (WIFEXITED(status)) out.exit_code = WEXITSTATUS(status);
    if (WIFSIGNALED(status)) out.signal = WTERMSIG(status);

    const bool killed_for_cpu = out.signal && (*out.signal == SIGXCPU);
    if (output_exceeded) {
      out.status = Status::OutputLimit;
    } else if (wall_exceeded || cpu_exceeded || killed_for_cpu ||
               out.cpu_used > policy.cpu_time_limit) {
      out.status = Status::TimeLimit;
    } else if (out.exit_code == 0) {
      out.status = Status::Ok;
    } else if (looks_like_memory_exhaustion(out, usage.ru_maxrss, policy.memory_limit)) {
      out.status = Status::MemoryLimit;
    } else {
      out.status = Status::RuntimeError;
    }
    return out;
  } catch (const std::exception& e) {
    return fail(e.what());
  }
}

}  // namespace pybox::sandbox

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pybox/grader/report.hpp"

struct sqlite3;

namespace pybox::store {

// Timestamps are microseconds since the Unix epoch.
using Timestamp = std::int64_t;
using Clock = std::function<Timestamp()>;

Timestamp system_clock_now();

class StoreError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class NotFound : public StoreError {
 public:
  using StoreError::StoreError;
};
class Forbidden : public StoreError {
 public:
  using StoreError::StoreError;
};
class Conflict : public StoreError {
 public:
  using StoreError::StoreError;
};
class InvalidInput : public StoreError {
 public:
  using StoreError::StoreError;
};

inline constexpr std::size_t kMaxCodeBytes = 64 * 1024;

struct User {
  std::string user_id;
  std::string display_name;
  std::optional<std::string> guru_id;
  Timestamp created_at = 0;
  bool staff = false;

  bool operator==(const User&) const = default;
};

struct Submission {
  std::int64_t submission_id = 0;
  std::string user_id;
  std::string exercise_id;
  std::string code;
  Timestamp timestamp = 0;
  grader::GradeReport report;

  bool operator==(const Submission&) const = default;
};

struct ProgressEntry {
  std::string user_id;
  std::string exercise_id;
  bool completed = false;
  std::optional<Timestamp> first_completed_at;

  bool operator==(const ProgressEntry&) const = default;
};

struct Reply {
  std::string author;
  std::string text;
  Timestamp timestamp = 0;

  bool operator==(const Reply&) const = default;
};

struct HelpThread {
  std::int64_t thread_id = 0;
  std::string user_id;
  std::string exercise_id;
  std::string message;
  std::string attached_code;
  std::optional<std::string> recipient;  // empty: the staff queue
  Timestamp created_at = 0;
  std::vector<Reply> replies;

  bool operator==(const HelpThread&) const = default;
};

// What a helper sees when answering a thread.
struct MailContext {
  HelpThread thread;
  std::vector<Submission> history;
  std::vector<ProgressEntry> progress;
  std::vector<HelpThread> related;  // same recipient and exercise, this one excluded
};

struct ExerciseOctiles {
  std::string exercise_id;
  std::size_t completers = 0;
  std::array<Timestamp, 7> octiles{};  // durations in microseconds
};

struct StatsReport {
  std::vector<std::pair<std::string, std::int64_t>> completions;  // per exercise, descending
  std::vector<std::pair<std::string, std::int64_t>> submissions;  // per user, descending
  std::vector<ExerciseOctiles> octiles;
};

// k/8 nearest-rank quantiles (k = 1..7) of the values. Empty input gives zeros.
std::array<Timestamp, 7> nearest_rank_octiles(std::vector<Timestamp> values);

// Columns: series,key,value. Octile rows use series octile_<k>.
std::string stats_csv(const StatsReport& report);
std::string stats_text(const StatsReport& report);

struct StoreOptions {
  std::filesystem::path path;  // ":memory:" for a private in-memory store
  Clock clock = system_clock_now;
  // Invoked inside record_submission after all writes and before COMMIT.
  // An exception rolls the transaction back; tests use it to crash mid-write.
  std::function<void()> before_commit;
};

class Store {
 public:
  explicit Store(StoreOptions options);
  ~Store();
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  // Users
  User create_user(const std::string& user_id, const std::string& display_name);
  std::optional<User> find_user(const std::string& user_id) const;
  void set_staff(const std::string& user_id, bool staff);
  // Staff flags become exactly the listed users (unknown ids are ignored).
  void replace_staff(const std::vector<std::string>& staff);
  // Login keys let a user mint new sessions; issuing one replaces the old.
  std::string issue_login_key(const std::string& user_id);
  bool check_login_key(const std::string& user_id, const std::string& key) const;
  // guru_id must name another existing user; nullopt removes the link.
  void set_guru(const std::string& user_id, const std::optional<std::string>& guru_id);

  // Exercises known to the store; submissions for others are rejected.
  void register_exercise(const std::string& exercise_id);
  std::vector<std::string> exercises() const;

  // Sessions: opaque bearer tokens.
  std::string create_session(const std::string& user_id, Timestamp ttl);
  // nullopt for unknown and expired tokens alike.
  std::optional<std::string> resolve_session(const std::string& token) const;

  // Appends one submission and updates progress atomically. With an
  // idempotency key already used by this user, returns the earlier record
  // and writes nothing.
  Submission record_submission(const std::string& user_id, const std::string& exercise_id,
                               const std::string& code, const grader::GradeReport& report,
                               const std::optional<std::string>& idempotency_key = std::nullopt);

  std::optional<Submission> find_by_idempotency_key(const std::string& user_id,
                                                    const std::string& key) const;

  // Oldest first. requester must be the user, the user's guru or staff.
  std::vector<Submission> history(const std::string& requester, const std::string& user_id,
                                  const std::string& exercise_id, std::size_t offset = 0,
                                  std::optional<std::size_t> limit = std::nullopt) const;
  std::size_t history_size(const std::string& requester, const std::string& user_id,
                           const std::string& exercise_id) const;
  std::optional<std::string> latest_code(const std::string& user_id,
                                         const std::string& exercise_id) const;
  // Every registered exercise, completed or not. Same access rule as history.
  std::vector<ProgressEntry> progress(const std::string& requester,
                                      const std::string& user_id) const;

  HelpThread file_help(const std::string& user_id, const std::string& exercise_id,
                       const std::string& message, const std::string& attached_code);
  // Thread owner, its recipient, or (for the staff queue) any staff member.
  HelpThread thread(const std::string& requester, std::int64_t thread_id) const;
  HelpThread reply(const std::string& author, std::int64_t thread_id, const std::string& text);
  // Threads the requester may answer: addressed to them, or the staff queue for staff.
  std::vector<HelpThread> inbox(const std::string& requester) const;
  MailContext mail_context(const std::string& requester, std::int64_t thread_id) const;

  // Every stored submission, oldest first; operator use (regrading).
  std::vector<Submission> all_submissions() const;

  StatsReport stats_report() const;

 private:
  struct Statement;
  Timestamp now() const;
  void exec(const char* sql) const;
  bool can_view(const std::string& requester, const std::string& user_id) const;
  bool is_recipient(const std::string& requester, const HelpThread& t) const;
  User require_user(const std::string& user_id) const;
  HelpThread load_thread(std::int64_t thread_id) const;
  std::vector<Submission> query_submissions(const std::string& where, const std::string& a,
                                            const std::string& b, std::size_t offset,
                                            std::optional<std::size_t> limit) const;
  std::vector<ProgressEntry> progress_unchecked(const std::string& user_id) const;
  std::vector<Submission> history_unchecked(const std::string& user_id,
                                            const std::string& exercise_id) const;

  StoreOptions options_;
  sqlite3* db_ = nullptr;
  mutable std::recursive_mutex mutex_;
  mutable Timestamp last_time_ = 0;
};

}  // namespace pybox::store

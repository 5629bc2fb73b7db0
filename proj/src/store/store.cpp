#include "pybox/store/store.hpp"

#include <sqlite3.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <random>

namespace pybox::store {

Timestamp system_clock_now() {
  using namespace std::chrono;
  return duration_cast<microseconds>(system_clock::now().time_since_epoch()).count();
}

namespace {

constexpr const char* kSchema = R"sql(
CREATE TABLE IF NOT EXISTS users (
  user_id TEXT PRIMARY KEY,
  display_name TEXT NOT NULL,
  guru_id TEXT REFERENCES users(user_id),
  created_at INTEGER NOT NULL,
  staff INTEGER NOT NULL DEFAULT 0,
  CHECK (guru_id IS NULL OR guru_id <> user_id)
);
CREATE TABLE IF NOT EXISTS credentials (
  user_id TEXT PRIMARY KEY REFERENCES users(user_id),
  login_key TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS exercises (
  exercise_id TEXT PRIMARY KEY
);
CREATE TABLE IF NOT EXISTS sessions (
  token TEXT PRIMARY KEY,
  user_id TEXT NOT NULL REFERENCES users(user_id),
  expires_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS submissions (
  submission_id INTEGER PRIMARY KEY AUTOINCREMENT,
  user_id TEXT NOT NULL REFERENCES users(user_id),
  exercise_id TEXT NOT NULL REFERENCES exercises(exercise_id),
  code TEXT NOT NULL,
  timestamp INTEGER NOT NULL,
  report TEXT NOT NULL,
  idempotency_key TEXT,
  UNIQUE (user_id, idempotency_key)
);
CREATE INDEX IF NOT EXISTS submissions_stream ON submissions(user_id, exercise_id, timestamp);
CREATE TRIGGER IF NOT EXISTS submissions_no_update BEFORE UPDATE ON submissions
  BEGIN SELECT RAISE(ABORT, 'submissions are append-only'); END;
CREATE TRIGGER IF NOT EXISTS submissions_no_delete BEFORE DELETE ON submissions
  BEGIN SELECT RAISE(ABORT, 'submissions are append-only'); END;
CREATE TABLE IF NOT EXISTS progress (
  user_id TEXT NOT NULL REFERENCES users(user_id),
  exercise_id TEXT NOT NULL REFERENCES exercises(exercise_id),
  first_completed_at INTEGER NOT NULL,
  PRIMARY KEY (user_id, exercise_id)
);
CREATE TRIGGER IF NOT EXISTS progress_no_delete BEFORE DELETE ON progress
  BEGIN SELECT RAISE(ABORT, 'progress never reverts'); END;
CREATE TABLE IF NOT EXISTS threads (
  thread_id INTEGER PRIMARY KEY AUTOINCREMENT,
  user_id TEXT NOT NULL REFERENCES users(user_id),
  exercise_id TEXT NOT NULL,
  message TEXT NOT NULL,
  attached_code TEXT NOT NULL,
  recipient TEXT,
  created_at INTEGER NOT NULL
);
CREATE INDEX IF NOT EXISTS threads_recipient ON threads(recipient, exercise_id);
CREATE TABLE IF NOT EXISTS replies (
  reply_id INTEGER PRIMARY KEY AUTOINCREMENT,
  thread_id INTEGER NOT NULL REFERENCES threads(thread_id),
  author TEXT NOT NULL,
  text TEXT NOT NULL,
  timestamp INTEGER NOT NULL
);
)sql";

bool valid_user_id(std::string_view id) {
  if (id.empty() || id.size() > 64) return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
           c == '_' || c == '-' || c == '.';
  });
}

std::string random_token() {
  std::random_device rd;
  std::string out;
  char buf[9];
  for (int i = 0; i < 4; ++i) {
    std::snprintf(buf, sizeof buf, "%08x", static_cast<unsigned>(rd()));
    out += buf;
  }
  return out;
}

}  // namespace

// Thin prepared-statement wrapper. Bind indices are 1-based as in SQLite.
struct Store::Statement {
  sqlite3* db;
  sqlite3_stmt* stmt = nullptr;

  Statement(sqlite3* d, const std::string& sql) : db(d) {
    if (sqlite3_prepare_v2(db, sql.c_str(), -1, &stmt, nullptr) != SQLITE_OK) {
      throw StoreError(std::string("sqlite prepare: ") + sqlite3_errmsg(db));
    }
  }
  ~Statement() { sqlite3_finalize(stmt); }
  Statement(const Statement&) = delete;
  Statement& operator=(const Statement&) = delete;

  Statement& bind(int i, const std::string& s) {
    sqlite3_bind_text(stmt, i, s.data(), static_cast<int>(s.size()), SQLITE_TRANSIENT);
    return *this;
  }
  Statement& bind(int i, std::int64_t v) {
    sqlite3_bind_int64(stmt, i, v);
    return *this;
  }
  Statement& bind(int i, const std::optional<std::string>& s) {
    if (s) return bind(i, *s);
    sqlite3_bind_null(stmt, i);
    return *this;
  }

  // True while a row is available.
  bool step() {
    const int rc = sqlite3_step(stmt);
    if (rc == SQLITE_ROW) return true;
    if (rc == SQLITE_DONE) return false;
    if ((rc & 0xff) == SQLITE_CONSTRAINT) throw Conflict(sqlite3_errmsg(db));
    throw StoreError(std::string("sqlite: ") + sqlite3_errmsg(db));
  }

  std::string text(int col) const {
    const auto* p = reinterpret_cast<const char*>(sqlite3_column_text(stmt, col));
    return p ? std::string(p, static_cast<std::size_t>(sqlite3_column_bytes(stmt, col)))
             : std::string();
  }
  std::optional<std::string> optional_text(int col) const {
    if (sqlite3_column_type(stmt, col) == SQLITE_NULL) return std::nullopt;
    return text(col);
  }
  std::int64_t integer(int col) const { return sqlite3_column_int64(stmt, col); }
};

Store::Store(StoreOptions options) : options_(std::move(options)) {
  if (!options_.clock) options_.clock = system_clock_now;
  const std::string path = options_.path.string();
  if (sqlite3_open_v2(path.c_str(), &db_,
                      SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX,
                      nullptr) != SQLITE_OK) {
    std::string msg = db_ ? sqlite3_errmsg(db_) : "out of memory";
    sqlite3_close(db_);
    throw StoreError("cannot open store " + path + ": " + msg);
  }
  sqlite3_busy_timeout(db_, 5000);
  exec("PRAGMA foreign_keys = ON");
  if (path != ":memory:") exec("PRAGMA journal_mode = WAL");
  exec("PRAGMA synchronous = FULL");
  exec(kSchema);
}

Store::~Store() { sqlite3_close(db_); }

void Store::exec(const char* sql) const {
  char* err = nullptr;
  if (sqlite3_exec(db_, sql, nullptr, nullptr, &err) != SQLITE_OK) {
    std::string msg = err ? err : "unknown error";
    sqlite3_free(err);
    throw StoreError("sqlite: " + msg);
  }
}

Timestamp Store::now() const {
  // Strictly increasing within this process even if the clock stalls or
  // steps back.
  last_time_ = std::max(options_.clock(), last_time_ + 1);
  return last_time_;
}

User Store::create_user(const std::string& user_id, const std::string& display_name) {
  if (!valid_user_id(user_id)) {
    throw InvalidInput("user id must be 1-64 characters from [A-Za-z0-9_.-]");
  }
  std::lock_guard lock(mutex_);
  User user{user_id, display_name, std::nullopt, now(), false};
  try {
    Statement s(db_, "INSERT INTO users(user_id, display_name, created_at) VALUES (?, ?, ?)");
    s.bind(1, user_id).bind(2, display_name).bind(3, user.created_at).step();
  } catch (const Conflict&) {
    throw Conflict("user '" + user_id + "' already exists");
  }
  return user;
}

std::optional<User> Store::find_user(const std::string& user_id) const {
  std::lock_guard lock(mutex_);
  Statement s(db_,
              "SELECT user_id, display_name, guru_id, created_at, staff FROM users WHERE user_id = ?");
  s.bind(1, user_id);
  if (!s.step()) return std::nullopt;
  return User{s.text(0), s.text(1), s.optional_text(2), s.integer(3), s.integer(4) != 0};
}

User Store::require_user(const std::string& user_id) const {
  auto user = find_user(user_id);
  if (!user) throw NotFound("unknown user '" + user_id + "'");
  return *user;
}

void Store::set_staff(const std::string& user_id, bool staff) {
  std::lock_guard lock(mutex_);
  require_user(user_id);
  Statement s(db_, "UPDATE users SET staff = ? WHERE user_id = ?");
  s.bind(1, std::int64_t{staff}).bind(2, user_id).step();
}

void Store::replace_staff(const std::vector<std::string>& staff) {
  std::lock_guard lock(mutex_);
  exec("BEGIN IMMEDIATE");
  try {
    exec("UPDATE users SET staff = 0");
    for (const auto& id : staff) {
      Statement s(db_, "UPDATE users SET staff = 1 WHERE user_id = ?");
      s.bind(1, id).step();
    }
    exec("COMMIT");
  } catch (...) {
    sqlite3_exec(db_, "ROLLBACK", nullptr, nullptr, nullptr);
    throw;
  }
}

std::string Store::issue_login_key(const std::string& user_id) {
  std::lock_guard lock(mutex_);
  require_user(user_id);
  const std::string key = random_token();
  Statement s(db_, "INSERT OR REPLACE INTO credentials(user_id, login_key) VALUES (?, ?)");
  s.bind(1, user_id).bind(2, key).step();
  return key;
}

bool Store::check_login_key(const std::string& user_id, const std::string& key) const {
  std::lock_guard lock(mutex_);
  Statement s(db_, "SELECT login_key FROM credentials WHERE user_id = ?");
  s.bind(1, user_id);
  if (!s.step()) return false;
  const std::string stored = s.text(0);
  // Constant-time comparison.
  if (stored.size() != key.size()) return false;
  unsigned char diff = 0;
  for (std::size_t i = 0; i < key.size(); ++i) diff |= stored[i] ^ key[i];
  return diff == 0;
}

void Store::set_guru(const std::string& user_id, const std::optional<std::string>& guru_id) {
  std::lock_guard lock(mutex_);
  require_user(user_id);
  if (guru_id) {
    if (*guru_id == user_id) throw InvalidInput("a user cannot be their own guru");
    if (!find_user(*guru_id)) throw NotFound("unknown user '" + *guru_id + "'");
  }
  Statement s(db_, "UPDATE users SET guru_id = ? WHERE user_id = ?");
  s.bind(1, guru_id).bind(2, user_id).step();
}

void Store::register_exercise(const std::string& exercise_id) {
  std::lock_guard lock(mutex_);
  Statement s(db_, "INSERT OR IGNORE INTO exercises(exercise_id) VALUES (?)");
  s.bind(1, exercise_id).step();
}

std::vector<std::string> Store::exercises() const {
  std::lock_guard lock(mutex_);
  Statement s(db_, "SELECT exercise_id FROM exercises ORDER BY exercise_id");
  std::vector<std::string> out;
  while (s.step()) out.push_back(s.text(0));
  return out;
}

std::string Store::create_session(const std::string& user_id, Timestamp ttl) {
  std::lock_guard lock(mutex_);
  require_user(user_id);
  const std::string token = random_token();
  Statement s(db_, "INSERT INTO sessions(token, user_id, expires_at) VALUES (?, ?, ?)");
  s.bind(1, token).bind(2, user_id).bind(3, options_.clock() + ttl).step();
  return token;
}

std::optional<std::string> Store::resolve_session(const std::string& token) const {
  std::lock_guard lock(mutex_);
  Statement s(db_, "SELECT user_id FROM sessions WHERE token = ? AND expires_at > ?");
  s.bind(1, token).bind(2, options_.clock());
  if (!s.step()) return std::nullopt;
  return s.text(0);
}

Submission Store::record_submission(const std::string& user_id, const std::string& exercise_id,
                                    const std::string& code, const grader::GradeReport& report,
                                    const std::optional<std::string>& idempotency_key) {
  if (code.size() > kMaxCodeBytes) throw InvalidInput("code exceeds 64 KiB");
  std::lock_guard lock(mutex_);
  require_user(user_id);
  {
    Statement s(db_, "SELECT 1 FROM exercises WHERE exercise_id = ?");
    s.bind(1, exercise_id);
    if (!s.step()) throw NotFound("unknown exercise '" + exercise_id + "'");
  }
  if (idempotency_key) {
    if (auto earlier = find_by_idempotency_key(user_id, *idempotency_key)) return *earlier;
  }

  exec("BEGIN IMMEDIATE");
  try {
    Timestamp ts = now();
    {
      // Another process may share the file; keep the stream monotone anyway.
      Statement s(db_,
                  "SELECT MAX(timestamp) FROM submissions WHERE user_id = ? AND exercise_id = ?");
      s.bind(1, user_id).bind(2, exercise_id);
      if (s.step() && sqlite3_column_type(s.stmt, 0) != SQLITE_NULL) {
        ts = std::max(ts, s.integer(0) + 1);
        last_time_ = std::max(last_time_, ts);
      }
    }
    Submission sub{0, user_id, exercise_id, code, ts, report};
    {
      Statement s(db_,
                  "INSERT INTO submissions(user_id, exercise_id, code, timestamp, report, "
                  "idempotency_key) VALUES (?, ?, ?, ?, ?, ?)");
      s.bind(1, user_id).bind(2, exercise_id).bind(3, code).bind(4, ts);
      s.bind(5, grader::to_json(report).dump()).bind(6, idempotency_key).step();
      sub.submission_id = sqlite3_last_insert_rowid(db_);
    }
    if (report.correct()) {
      Statement s(db_,
                  "INSERT OR IGNORE INTO progress(user_id, exercise_id, first_completed_at) "
                  "VALUES (?, ?, ?)");
      s.bind(1, user_id).bind(2, exercise_id).bind(3, ts).step();
    }
    if (options_.before_commit) options_.before_commit();
    exec("COMMIT");
    return sub;
  } catch (...) {
    sqlite3_exec(db_, "ROLLBACK", nullptr, nullptr, nullptr);
    throw;
  }
}

std::vector<Submission> Store::query_submissions(const std::string& where, const std::string& a,
                                                 const std::string& b, std::size_t offset,
                                                 std::optional<std::size_t> limit) const {
  std::string sql =
      "SELECT submission_id, user_id, exercise_id, code, timestamp, report FROM submissions";
  if (!where.empty()) sql += " WHERE " + where;
  sql += " ORDER BY timestamp, submission_id LIMIT ?3 OFFSET ?4";
  Statement s(db_, sql);
  if (!where.empty()) s.bind(1, a).bind(2, b);
  s.bind(3, limit ? static_cast<std::int64_t>(*limit) : std::int64_t{-1});
  s.bind(4, static_cast<std::int64_t>(offset));
  std::vector<Submission> out;
  while (s.step()) {
    out.push_back({s.integer(0), s.text(1), s.text(2), s.text(3), s.integer(4),
                   grader::report_from_json(nlohmann::json::parse(s.text(5)))});
  }
  return out;
}

std::optional<Submission> Store::find_by_idempotency_key(const std::string& user_id,
                                                         const std::string& key) const {
  std::lock_guard lock(mutex_);
  auto found = query_submissions("user_id = ?1 AND idempotency_key = ?2", user_id, key, 0, 1);
  if (found.empty()) return std::nullopt;
  return found.front();
}

bool Store::can_view(const std::string& requester, const std::string& user_id) const {
  if (requester == user_id) return true;
  const auto viewer = find_user(requester);
  if (!viewer) return false;
  if (viewer->staff) return true;
  const auto user = find_user(user_id);
  return user && user->guru_id == requester;
}

std::vector<Submission> Store::history_unchecked(const std::string& user_id,
                                                 const std::string& exercise_id) const {
  return query_submissions("user_id = ?1 AND exercise_id = ?2", user_id, exercise_id, 0,
                           std::nullopt);
}

std::vector<Submission> Store::history(const std::string& requester, const std::string& user_id,
                                       const std::string& exercise_id, std::size_t offset,
                                       std::optional<std::size_t> limit) const {
  std::lock_guard lock(mutex_);
  if (!can_view(requester, user_id)) throw Forbidden("not allowed to view this history");
  return query_submissions("user_id = ?1 AND exercise_id = ?2", user_id, exercise_id, offset,
                           limit);
}

std::size_t Store::history_size(const std::string& requester, const std::string& user_id,
                                const std::string& exercise_id) const {
  std::lock_guard lock(mutex_);
  if (!can_view(requester, user_id)) throw Forbidden("not allowed to view this history");
  Statement s(db_, "SELECT COUNT(*) FROM submissions WHERE user_id = ? AND exercise_id = ?");
  s.bind(1, user_id).bind(2, exercise_id).step();
  return static_cast<std::size_t>(s.integer(0));
}

std::optional<std::string> Store::latest_code(const std::string& user_id,
                                              const std::string& exercise_id) const {
  std::lock_guard lock(mutex_);
  Statement s(db_,
              "SELECT code FROM submissions WHERE user_id = ? AND exercise_id = ? "
              "ORDER BY timestamp DESC, submission_id DESC LIMIT 1");
  s.bind(1, user_id).bind(2, exercise_id);
  if (!s.step()) return std::nullopt;
  return s.text(0);
}

std::vector<ProgressEntry> Store::progress_unchecked(const std::string& user_id) const {
  Statement s(db_,
              "SELECT e.exercise_id, p.first_completed_at FROM exercises e "
              "LEFT JOIN progress p ON p.exercise_id = e.exercise_id AND p.user_id = ? "
              "ORDER BY e.exercise_id");
  s.bind(1, user_id);
  std::vector<ProgressEntry> out;
  while (s.step()) {
    ProgressEntry e{user_id, s.text(0), false, std::nullopt};
    if (sqlite3_column_type(s.stmt, 1) != SQLITE_NULL) {
      e.completed = true;
      e.first_completed_at = s.integer(1);
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<ProgressEntry> Store::progress(const std::string& requester,
                                           const std::string& user_id) const {
  std::lock_guard lock(mutex_);
  require_user(user_id);
  if (!can_view(requester, user_id)) throw Forbidden("not allowed to view this progress");
  return progress_unchecked(user_id);
}

HelpThread Store::file_help(const std::string& user_id, const std::string& exercise_id,
                            const std::string& message, const std::string& attached_code) {
  if (attached_code.size() > kMaxCodeBytes) throw InvalidInput("code exceeds 64 KiB");
  std::lock_guard lock(mutex_);
  const User user = require_user(user_id);
  HelpThread t{0, user_id, exercise_id, message, attached_code, user.guru_id, now(), {}};
  Statement s(db_,
              "INSERT INTO threads(user_id, exercise_id, message, attached_code, recipient, "
              "created_at) VALUES (?, ?, ?, ?, ?, ?)");
  s.bind(1, user_id).bind(2, exercise_id).bind(3, message).bind(4, attached_code);
  s.bind(5, t.recipient).bind(6, t.created_at).step();
  t.thread_id = sqlite3_last_insert_rowid(db_);
  return t;
}

HelpThread Store::load_thread(std::int64_t thread_id) const {
  Statement s(db_,
              "SELECT thread_id, user_id, exercise_id, message, attached_code, recipient, "
              "created_at FROM threads WHERE thread_id = ?");
  s.bind(1, thread_id);
  if (!s.step()) throw NotFound("unknown help thread " + std::to_string(thread_id));
  HelpThread t{s.integer(0), s.text(1),          s.text(2),    s.text(3),
               s.text(4),    s.optional_text(5), s.integer(6), {}};
  Statement r(db_,
              "SELECT author, text, timestamp FROM replies WHERE thread_id = ? ORDER BY reply_id");
  r.bind(1, thread_id);
  while (r.step()) t.replies.push_back({r.text(0), r.text(1), r.integer(2)});
  return t;
}

bool Store::is_recipient(const std::string& requester, const HelpThread& t) const {
  if (t.recipient) return *t.recipient == requester;
  const auto user = find_user(requester);
  return user && user->staff;
}

HelpThread Store::thread(const std::string& requester, std::int64_t thread_id) const {
  std::lock_guard lock(mutex_);
  HelpThread t = load_thread(thread_id);
  if (requester != t.user_id && !is_recipient(requester, t)) {
    throw Forbidden("not allowed to view this help thread");
  }
  return t;
}

HelpThread Store::reply(const std::string& author, std::int64_t thread_id,
                        const std::string& text) {
  std::lock_guard lock(mutex_);
  HelpThread t = load_thread(thread_id);
  if (author != t.user_id && !is_recipient(author, t)) {
    throw Forbidden("not allowed to reply to this help thread");
  }
  Statement s(db_, "INSERT INTO replies(thread_id, author, text, timestamp) VALUES (?, ?, ?, ?)");
  s.bind(1, thread_id).bind(2, author).bind(3, text).bind(4, now()).step();
  return load_thread(thread_id);
}

std::vector<HelpThread> Store::inbox(const std::string& requester) const {
  std::lock_guard lock(mutex_);
  const auto user = find_user(requester);
  if (!user) return {};
  Statement s(db_,
              "SELECT thread_id FROM threads WHERE recipient = ?1 OR (recipient IS NULL AND ?2) "
              "ORDER BY thread_id");
  s.bind(1, requester).bind(2, std::int64_t{user->staff});
  std::vector<std::int64_t> ids;
  while (s.step()) ids.push_back(s.integer(0));
  std::vector<HelpThread> out;
  for (auto id : ids) out.push_back(load_thread(id));
  return out;
}

MailContext Store::mail_context(const std::string& requester, std::int64_t thread_id) const {
  std::lock_guard lock(mutex_);
  MailContext ctx;
  ctx.thread = load_thread(thread_id);
  if (!is_recipient(requester, ctx.thread)) {
    throw Forbidden("only the recipient may open this help thread's context");
  }
  ctx.history = history_unchecked(ctx.thread.user_id, ctx.thread.exercise_id);
  ctx.progress = progress_unchecked(ctx.thread.user_id);

  Statement s(db_,
              "SELECT thread_id FROM threads WHERE recipient IS ?1 AND exercise_id = ?2 "
              "AND thread_id <> ?3 ORDER BY thread_id");
  s.bind(1, ctx.thread.recipient).bind(2, ctx.thread.exercise_id).bind(3, thread_id);
  std::vector<std::int64_t> ids;
  while (s.step()) ids.push_back(s.integer(0));
  for (auto id : ids) ctx.related.push_back(load_thread(id));
  return ctx;
}

std::vector<Submission> Store::all_submissions() const {
  std::lock_guard lock(mutex_);
  return query_submissions("", "", "", 0, std::nullopt);
}

StatsReport Store::stats_report() const {
  std::lock_guard lock(mutex_);
  StatsReport report;
  {
    Statement s(db_,
                "SELECT exercise_id, COUNT(*) AS n FROM progress GROUP BY exercise_id "
                "ORDER BY n DESC, exercise_id");
    while (s.step()) report.completions.emplace_back(s.text(0), s.integer(1));
  }
  {
    Statement s(db_,
                "SELECT user_id, COUNT(*) AS n FROM submissions GROUP BY user_id "
                "ORDER BY n DESC, user_id");
    while (s.step()) report.submissions.emplace_back(s.text(0), s.integer(1));
  }
  {
    Statement s(db_,
                "SELECT p.exercise_id, p.first_completed_at - u.created_at FROM progress p "
                "JOIN users u ON u.user_id = p.user_id ORDER BY p.exercise_id");
    std::string current;
    std::vector<Timestamp> durations;
    const auto flush = [&] {
      if (durations.empty()) return;
      report.octiles.push_back({current, durations.size(), nearest_rank_octiles(durations)});
      durations.clear();
    };
    while (s.step()) {
      std::string id = s.text(0);
      if (id != current) {
        flush();
        current = std::move(id);
      }
      durations.push_back(s.integer(1));
    }
    flush();
  }
  return report;
}

}  // namespace pybox::store

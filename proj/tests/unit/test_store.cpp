#include <gtest/gtest.h>

#include <sqlite3.h>
#include <sys/wait.h>
#include <unistd.h>

#include <map>
#include <random>
#include <set>
#include <thread>

#include "pybox/store/store.hpp"
#include "support.hpp"

namespace pybox::store {
namespace {

using grader::GradeReport;
using grader::Verdict;

constexpr Timestamp kHour = 3600LL * 1000 * 1000;

GradeReport report(Verdict v) {
  GradeReport r;
  r.verdict = v;
  r.summary = std::string(grader::to_string(v));
  return r;
}

// A store on a manual clock that starts at a fixed instant.
struct Fixture {
  explicit Fixture(std::filesystem::path path = ":memory:") {
    StoreOptions o;
    o.path = std::move(path);
    o.clock = [this] { return *now; };
    db = std::make_unique<Store>(std::move(o));
  }
  std::shared_ptr<Timestamp> now = std::make_shared<Timestamp>(1'700'000'000'000'000LL);
  std::unique_ptr<Store> db;
};

class StoreTest : public ::testing::Test {
 protected:
  void SetUp() override {
    for (const char* id : {"ann", "bob", "gus", "sam", "eve"}) db().create_user(id, id);
    db().set_staff("sam", true);
    db().set_guru("ann", "gus");
    for (const char* ex : {"hello", "swap", "heads"}) db().register_exercise(ex);
  }
  Store& db() { return *f.db; }
  Fixture f;
};

TEST_F(StoreTest, FirstCorrectCompletesAndLaterFailureDoesNotRevert) {
  auto p = db().progress("ann", "ann");
  ASSERT_EQ(p.size(), 3u);
  for (const auto& e : p) EXPECT_FALSE(e.completed);

  db().record_submission("ann", "swap", "x = y", report(Verdict::Incorrect));
  const auto ok = db().record_submission("ann", "swap", "x, y = y, x", report(Verdict::Correct));
  db().record_submission("ann", "swap", "oops", report(Verdict::RuntimeError));

  for (const auto& e : db().progress("ann", "ann")) {
    if (e.exercise_id == "swap") {
      EXPECT_TRUE(e.completed);
      EXPECT_EQ(e.first_completed_at, ok.timestamp);
    } else {
      EXPECT_FALSE(e.completed);
    }
  }
}

TEST_F(StoreTest, TimestampsStrictlyIncreaseEvenWithAStalledClock) {
  std::vector<Timestamp> ts;
  for (int i = 0; i < 50; ++i) {
    ts.push_back(db().record_submission("bob", "hello", "print()", report(Verdict::Incorrect)).timestamp);
  }
  for (std::size_t i = 1; i < ts.size(); ++i) EXPECT_GT(ts[i], ts[i - 1]);
  *f.now -= kHour;  // the wall clock jumps backwards
  const auto later = db().record_submission("bob", "hello", "print(1)", report(Verdict::Incorrect));
  EXPECT_GT(later.timestamp, ts.back());
}

TEST_F(StoreTest, HistoryExamples) {
  EXPECT_TRUE(db().history("bob", "bob", "hello").empty());
  for (const char* code : {"a", "b", "c"}) {
    db().record_submission("ann", "hello", code, report(Verdict::Incorrect));
  }
  const auto mine = db().history("ann", "ann", "hello");
  ASSERT_EQ(mine.size(), 3u);
  EXPECT_EQ(mine[0].code, "a");
  EXPECT_EQ(mine[2].code, "c");
  EXPECT_EQ(db().history("gus", "ann", "hello"), mine);
  EXPECT_EQ(db().history("sam", "ann", "hello"), mine);
  EXPECT_EQ(db().history_size("ann", "ann", "hello"), 3u);
  const auto page = db().history("ann", "ann", "hello", 1, 1);
  ASSERT_EQ(page.size(), 1u);
  EXPECT_EQ(page[0].code, "b");
  EXPECT_EQ(mine[1].report, report(Verdict::Incorrect));
}

TEST_F(StoreTest, LatestCodeFollowsTheNewestSubmission) {
  EXPECT_FALSE(db().latest_code("ann", "swap"));
  db().record_submission("ann", "swap", "A", report(Verdict::Incorrect));
  db().record_submission("ann", "swap", "B", report(Verdict::Incorrect));
  EXPECT_EQ(db().latest_code("ann", "swap"), "B");
  db().record_submission("ann", "swap", "A", report(Verdict::Incorrect));
  EXPECT_EQ(db().latest_code("ann", "swap"), "A");
}

TEST_F(StoreTest, AuthorizationMatrix) {
  db().record_submission("ann", "hello", "x", report(Verdict::Incorrect));
  // ann's history: ann (self), gus (guru), sam (staff) yes; bob, eve no.
  const std::map<std::string, bool> history_access = {
      {"ann", true}, {"gus", true}, {"sam", true}, {"bob", false}, {"eve", false}};
  for (const auto& [who, allowed] : history_access) {
    if (allowed) {
      EXPECT_NO_THROW(db().history(who, "ann", "hello")) << who;
      EXPECT_NO_THROW(db().progress(who, "ann")) << who;
    } else {
      EXPECT_THROW(db().history(who, "ann", "hello"), Forbidden) << who;
      EXPECT_THROW(db().history_size(who, "ann", "hello"), Forbidden) << who;
      EXPECT_THROW(db().progress(who, "ann"), Forbidden) << who;
    }
  }
  // Guru links are one way.
  EXPECT_THROW(db().history("ann", "gus", "hello"), Forbidden);

  const auto to_guru = db().file_help("ann", "hello", "stuck", "x");
  const auto to_staff = db().file_help("bob", "hello", "help", "y");
  // mail_context: recipients only; for the staff queue, any staff member.
  const std::map<std::string, bool> guru_thread = {
      {"gus", true}, {"ann", false}, {"bob", false}, {"sam", false}, {"eve", false}};
  for (const auto& [who, allowed] : guru_thread) {
    if (allowed) {
      EXPECT_NO_THROW(db().mail_context(who, to_guru.thread_id)) << who;
    } else {
      EXPECT_THROW(db().mail_context(who, to_guru.thread_id), Forbidden) << who;
    }
  }
  const std::map<std::string, bool> staff_thread = {
      {"sam", true}, {"bob", false}, {"gus", false}, {"ann", false}, {"eve", false}};
  for (const auto& [who, allowed] : staff_thread) {
    if (allowed) {
      EXPECT_NO_THROW(db().mail_context(who, to_staff.thread_id)) << who;
    } else {
      EXPECT_THROW(db().mail_context(who, to_staff.thread_id), Forbidden) << who;
    }
  }
  // Reading the thread itself is also open to its author.
  EXPECT_NO_THROW(db().thread("ann", to_guru.thread_id));
  EXPECT_THROW(db().thread("eve", to_guru.thread_id), Forbidden);
  EXPECT_THROW(db().reply("eve", to_guru.thread_id, "hi"), Forbidden);
  EXPECT_THROW(db().mail_context("gus", 99999), NotFound);
}

TEST_F(StoreTest, HelpGoesToTheGuruOrElseToStaff) {
  const auto a = db().file_help("ann", "swap", "why?", "x = y\ny = x");
  EXPECT_EQ(a.recipient, "gus");
  EXPECT_EQ(a.attached_code, "x = y\ny = x");
  const auto b = db().file_help("bob", "swap", "", "print()");
  EXPECT_FALSE(b.recipient);
  EXPECT_EQ(b.message, "");

  EXPECT_EQ(db().inbox("gus").size(), 1u);
  EXPECT_EQ(db().inbox("sam").size(), 1u);
  EXPECT_TRUE(db().inbox("eve").empty());

  db().reply("gus", a.thread_id, "use a temp");
  db().reply("ann", a.thread_id, "thanks");
  const auto t = db().thread("ann", a.thread_id);
  ASSERT_EQ(t.replies.size(), 2u);
  EXPECT_EQ(t.replies[0].author, "gus");
  EXPECT_GT(t.replies[1].timestamp, t.replies[0].timestamp);

  EXPECT_THROW(db().file_help("nobody", "swap", "", ""), NotFound);
}

TEST_F(StoreTest, MailContextBundlesHistoryProgressAndRelatedThreads) {
  db().create_user("cid", "cid");
  db().set_guru("cid", "gus");
  db().record_submission("ann", "heads", "heads = 1", report(Verdict::Incorrect));
  db().record_submission("ann", "hello", "print('Hello, World!')", report(Verdict::Correct));
  const auto t1 = db().file_help("ann", "heads", "1", "a");
  db().file_help("ann", "heads", "2", "b");
  db().file_help("cid", "heads", "3", "c");
  db().file_help("cid", "swap", "other exercise", "d");
  db().file_help("bob", "heads", "staff queue", "e");

  const auto ctx = db().mail_context("gus", t1.thread_id);
  EXPECT_EQ(ctx.thread, db().thread("gus", t1.thread_id));
  EXPECT_EQ(ctx.history, db().history("ann", "ann", "heads"));
  EXPECT_EQ(ctx.progress, db().progress("ann", "ann"));
  ASSERT_EQ(ctx.related.size(), 2u);
  for (const auto& r : ctx.related) {
    EXPECT_NE(r.thread_id, t1.thread_id);
    EXPECT_EQ(r.exercise_id, "heads");
    EXPECT_EQ(r.recipient, "gus");
  }
}

TEST_F(StoreTest, GuruMustBeSomeoneElseWhoExists) {
  EXPECT_THROW(db().set_guru("bob", "bob"), InvalidInput);
  EXPECT_THROW(db().set_guru("bob", "ghost"), NotFound);
  db().set_guru("ann", std::nullopt);
  EXPECT_FALSE(db().find_user("ann")->guru_id);
  EXPECT_FALSE(db().file_help("ann", "hello", "", "").recipient);
}

TEST_F(StoreTest, UnknownUserOrExerciseIsRejected) {
  EXPECT_THROW(db().record_submission("ghost", "hello", "", report(Verdict::Correct)), NotFound);
  EXPECT_THROW(db().record_submission("ann", "ghost", "", report(Verdict::Correct)), NotFound);
  EXPECT_THROW(db().record_submission("ann", "hello", std::string(kMaxCodeBytes + 1, 'x'),
                                      report(Verdict::Incorrect)),
               InvalidInput);
  EXPECT_THROW(db().create_user("ann", "again"), Conflict);
  EXPECT_THROW(db().create_user("bad id", "x"), InvalidInput);
}

TEST_F(StoreTest, IdempotencyKeyReturnsTheEarlierRecord) {
  const auto a = db().record_submission("ann", "hello", "x", report(Verdict::Incorrect), "k1");
  const auto b = db().record_submission("ann", "hello", "x", report(Verdict::Incorrect), "k1");
  EXPECT_EQ(a, b);
  EXPECT_EQ(db().history_size("ann", "ann", "hello"), 1u);
  // Keys are per user.
  db().record_submission("bob", "hello", "x", report(Verdict::Incorrect), "k1");
  EXPECT_EQ(db().history_size("bob", "bob", "hello"), 1u);
  EXPECT_EQ(db().find_by_idempotency_key("ann", "k1"), a);
}

TEST_F(StoreTest, SessionsAndLoginKeys) {
  const auto token = db().create_session("ann", kHour);
  EXPECT_EQ(db().resolve_session(token), "ann");
  EXPECT_FALSE(db().resolve_session("not-a-token"));
  *f.now += 2 * kHour;
  EXPECT_FALSE(db().resolve_session(token));

  const auto key = db().issue_login_key("bob");
  EXPECT_TRUE(db().check_login_key("bob", key));
  EXPECT_FALSE(db().check_login_key("ann", key));
  const auto fresh = db().issue_login_key("bob");
  EXPECT_FALSE(db().check_login_key("bob", key));
  EXPECT_TRUE(db().check_login_key("bob", fresh));
}

// Random operation sequences: history only grows, progress never reverts.
TEST_F(StoreTest, RandomWorkloadKeepsTheInvariants) {
  std::mt19937_64 rng(7);
  const std::vector<std::string> users = {"ann", "bob", "eve"};
  const std::vector<std::string> exercises = {"hello", "swap", "heads"};
  const std::vector<Verdict> verdicts = {Verdict::Correct, Verdict::Incorrect, Verdict::RuntimeError,
                                         Verdict::TimeLimit};
  std::map<std::pair<std::string, std::string>, std::vector<Submission>> seen;
  std::set<std::pair<std::string, std::string>> completed;
  for (int step = 0; step < 400; ++step) {
    const auto& u = users[rng() % users.size()];
    const auto& e = exercises[rng() % exercises.size()];
    // Stall the clock most of the time.
    if (rng() % 4 == 0) *f.now += static_cast<Timestamp>(rng() % 1000);
    const auto v = verdicts[rng() % verdicts.size()];
    seen[{u, e}].push_back(db().record_submission(u, e, "code " + std::to_string(step), report(v)));
    if (v == Verdict::Correct) completed.insert({u, e});

    if (step % 40 == 0) {
      for (const auto& [key, subs] : seen) {
        const auto h = db().history("sam", key.first, key.second);
        ASSERT_EQ(h, subs);
        for (std::size_t i = 1; i < h.size(); ++i) ASSERT_GT(h[i].timestamp, h[i - 1].timestamp);
      }
      for (const auto& uid : users) {
        for (const auto& p : db().progress("sam", uid)) {
          ASSERT_EQ(p.completed, completed.count({uid, p.exercise_id}) == 1);
        }
      }
    }
  }
}

TEST_F(StoreTest, RowsCannotBeRewrittenBehindTheStoresBack) {
  // Even raw SQL on the same file is refused by the schema's triggers.
  testing::TempDir dir;
  Fixture disk(dir / "s.db");
  disk.db->create_user("ann", "Ann");
  disk.db->register_exercise("hello");
  disk.db->record_submission("ann", "hello", "print()", report(Verdict::Correct));

  sqlite3* raw = nullptr;
  ASSERT_EQ(sqlite3_open((dir / "s.db").c_str(), &raw), SQLITE_OK);
  for (const char* sql : {"UPDATE submissions SET code = 'x'", "DELETE FROM submissions",
                          "DELETE FROM progress", "UPDATE progress SET completed = 0"}) {
    EXPECT_NE(sqlite3_exec(raw, sql, nullptr, nullptr, nullptr), SQLITE_OK) << sql;
  }
  sqlite3_close(raw);
  EXPECT_EQ(disk.db->history("ann", "ann", "hello").size(), 1u);
}

TEST(StoreCrash, InterruptedSubmissionLeavesNothing) {
  testing::TempDir dir;
  const auto path = dir / "crash.db";
  {
    Fixture f(path);
    f.db->create_user("ann", "Ann");
    f.db->register_exercise("hello");
    f.db->record_submission("ann", "hello", "first", report(Verdict::Incorrect));
  }
  for (int round = 0; round < 5; ++round) {
    const pid_t pid = ::fork();
    ASSERT_GE(pid, 0);
    if (pid == 0) {
      StoreOptions o;
      o.path = path;
      o.before_commit = [] { ::_exit(42); };  // dies mid-transaction
      Store s(std::move(o));
      s.record_submission("ann", "hello", "lost", report(Verdict::Correct));
      ::_exit(0);
    }
    int status = 0;
    ::waitpid(pid, &status, 0);
    ASSERT_TRUE(WIFEXITED(status));
    ASSERT_EQ(WEXITSTATUS(status), 42);
  }
  Fixture f(path);
  const auto h = f.db->history("ann", "ann", "hello");
  ASSERT_EQ(h.size(), 1u);
  EXPECT_EQ(h[0].code, "first");
  EXPECT_FALSE(f.db->progress("ann", "ann").at(0).completed);

  // A hook that throws rolls back the same way, and the store stays usable.
  StoreOptions o;
  o.path = path;
  o.before_commit = [] { throw std::runtime_error("abort"); };
  Store s(std::move(o));
  EXPECT_THROW(s.record_submission("ann", "hello", "lost", report(Verdict::Correct)), std::runtime_error);
  EXPECT_EQ(f.db->history("ann", "ann", "hello").size(), 1u);
  f.db->record_submission("ann", "hello", "kept", report(Verdict::Correct));
  EXPECT_EQ(f.db->history("ann", "ann", "hello").size(), 2u);
}

TEST(StoreConcurrency, ParallelWritersKeepStreamsOrdered) {
  testing::TempDir dir;
  Fixture f(dir / "c.db");
  for (int u = 0; u < 4; ++u) f.db->create_user("u" + std::to_string(u), "");
  f.db->register_exercise("hello");
  std::vector<std::thread> writers;
  for (int u = 0; u < 4; ++u) {
    writers.emplace_back([&, u] {
      for (int i = 0; i < 25; ++i) {
        f.db->record_submission("u" + std::to_string(u), "hello", std::to_string(i),
                                report(Verdict::Incorrect));
      }
    });
  }
  for (auto& t : writers) t.join();
  for (int u = 0; u < 4; ++u) {
    const auto id = "u" + std::to_string(u);
    const auto h = f.db->history(id, id, "hello");
    ASSERT_EQ(h.size(), 25u);
    for (std::size_t i = 0; i < h.size(); ++i) EXPECT_EQ(h[i].code, std::to_string(i));
  }
}

TEST(Octiles, NearestRankByHand) {
  std::vector<Timestamp> hours;
  for (int k = 8; k >= 1; --k) hours.push_back(k * kHour);
  const auto o = nearest_rank_octiles(hours);
  for (int k = 1; k <= 7; ++k) EXPECT_EQ(o[k - 1], k * kHour);

  // n = 3: ranks ceil(k*3/8) = 1,1,2,2,2,3,3.
  const auto small = nearest_rank_octiles({30, 10, 20});
  EXPECT_EQ(small, (std::array<Timestamp, 7>{10, 10, 20, 20, 20, 30, 30}));
  EXPECT_EQ(nearest_rank_octiles({}), (std::array<Timestamp, 7>{}));
  EXPECT_EQ(nearest_rank_octiles({5}), (std::array<Timestamp, 7>{5, 5, 5, 5, 5, 5, 5}));
}

TEST(Stats, EmptyStoreHasEmptySeries) {
  Fixture f;
  const auto s = f.db->stats_report();
  EXPECT_TRUE(s.completions.empty());
  EXPECT_TRUE(s.submissions.empty());
  EXPECT_TRUE(s.octiles.empty());
}

TEST(Stats, EightCompletersAtOneThroughEightHours) {
  Fixture f;
  f.db->register_exercise("sieve");
  f.db->register_exercise("hello");
  const Timestamp start = *f.now;
  for (int k = 1; k <= 8; ++k) f.db->create_user("p" + std::to_string(k), "");
  // Registration timestamps are forced apart by a microsecond each; complete
  // exactly k hours after each one's own registration.
  std::vector<Timestamp> registered;
  for (int k = 1; k <= 8; ++k) registered.push_back(f.db->find_user("p" + std::to_string(k))->created_at);
  for (int k = 1; k <= 8; ++k) {
    *f.now = registered[k - 1] + k * kHour;
    f.db->record_submission("p" + std::to_string(k), "sieve", "x", report(Verdict::Correct));
  }
  // Three complete hello, with some extra noise submissions.
  for (int k = 1; k <= 3; ++k) {
    *f.now += 1000;
    f.db->record_submission("p" + std::to_string(k), "hello", "y", report(Verdict::Incorrect));
    f.db->record_submission("p" + std::to_string(k), "hello", "y", report(Verdict::Correct));
  }
  EXPECT_GE(registered[0], start);

  const auto s = f.db->stats_report();
  ASSERT_EQ(s.completions.size(), 2u);
  EXPECT_EQ(s.completions[0], (std::pair<std::string, std::int64_t>{"sieve", 8}));
  EXPECT_EQ(s.completions[1], (std::pair<std::string, std::int64_t>{"hello", 3}));
  ASSERT_EQ(s.submissions.size(), 8u);
  EXPECT_EQ(s.submissions[0].second, 3);
  for (std::size_t i = 1; i < s.submissions.size(); ++i) {
    EXPECT_LE(s.submissions[i].second, s.submissions[i - 1].second);
  }

  const auto it = std::find_if(s.octiles.begin(), s.octiles.end(),
                               [](const ExerciseOctiles& o) { return o.exercise_id == "sieve"; });
  ASSERT_NE(it, s.octiles.end());
  EXPECT_EQ(it->completers, 8u);
  for (int k = 1; k <= 7; ++k) EXPECT_EQ(it->octiles[k - 1], k * kHour);

  const auto csv = stats_csv(s);
  EXPECT_EQ(csv.rfind("series,key,value\n", 0), 0u);
  EXPECT_NE(csv.find("completions,sieve,8\n"), std::string::npos);
  EXPECT_NE(csv.find("octile_1,sieve,3600000000\n"), std::string::npos);
  EXPECT_NE(csv.find("octile_7,sieve,25200000000\n"), std::string::npos);
  EXPECT_FALSE(stats_text(s).empty());
}

TEST(Stats, ReopenedStoreKeepsEverything) {
  testing::TempDir dir;
  {
    Fixture f(dir / "p.db");
    f.db->create_user("ann", "Ann");
    f.db->register_exercise("hello");
    f.db->record_submission("ann", "hello", "print('Hello, World!')", report(Verdict::Correct));
  }
  Fixture again(dir / "p.db");
  EXPECT_EQ(again.db->latest_code("ann", "hello"), "print('Hello, World!')");
  EXPECT_TRUE(again.db->progress("ann", "ann").at(0).completed);
  EXPECT_EQ(again.db->find_user("ann")->display_name, "Ann");
}

}  // namespace
}  // namespace pybox::store

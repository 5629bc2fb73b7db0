#include <gtest/gtest.h>

#include <future>
#include <set>

#include "pybox/grader/report.hpp"
#include "service_support.hpp"

namespace pybox::testing {
namespace {

class ServiceTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { ts = new TestService(); }
  static void TearDownTestSuite() {
    delete ts;
    ts = nullptr;
  }
  static TestService* ts;
  ApiClient api() { return ts->client(); }
  // Unique per call so tests can share one service.
  std::string fresh_user(const std::string& stem) {
    static int n = 0;
    return stem + std::to_string(++n);
  }
};
TestService* ServiceTest::ts = nullptr;

std::string error_code(const Response& r) { return r.body["error"]["code"].get<std::string>(); }

TEST_F(ServiceTest, RegisterSignInAndWhoAmI) {
  const auto id = fresh_user("reg");
  const auto r = api().post("/api/users", {{"user_id", id}, {"display_name", "Reg"}});
  ASSERT_EQ(r.status, 201) << r.raw;
  const auto token = r.body["token"].get<std::string>();
  const auto key = r.body["login_key"].get<std::string>();

  const auto me = api().get("/api/me", token);
  ASSERT_EQ(me.status, 200);
  EXPECT_EQ(me.body["user_id"], id);
  EXPECT_EQ(me.body["display_name"], "Reg");
  EXPECT_FALSE(me.body["staff"].get<bool>());

  const auto s = api().post("/api/session", {{"user_id", id}, {"login_key", key}});
  ASSERT_EQ(s.status, 200);
  EXPECT_EQ(api().get("/api/me", s.body["token"].get<std::string>()).status, 200);
  EXPECT_EQ(api().post("/api/session", {{"user_id", id}, {"login_key", "wrong"}}).status, 401);

  EXPECT_EQ(api().post("/api/users", {{"user_id", id}}).status, 409);
  EXPECT_EQ(api().post("/api/users", {{"user_id", "has space"}}).status, 400);
  EXPECT_EQ(api().post("/api/users", json::object()).status, 400);
}

TEST_F(ServiceTest, SessionCookieWorksLikeBearer) {
  const auto token = ts->user(fresh_user("cookie"));
  httplib::Client c("127.0.0.1", ts->port);
  const auto r = c.Get("/api/me", {{"Cookie", "theme=dark; pybox_session=" + token}});
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
}

TEST_F(ServiceTest, StatusCodes) {
  const auto token = ts->user(fresh_user("codes"));
  // 401: no session where one is needed, or a bad one anywhere.
  EXPECT_EQ(api().get("/api/me").status, 401);
  EXPECT_EQ(api().get("/api/progress").status, 401);
  EXPECT_EQ(api().get("/api/exercises/hello/history").status, 401);
  EXPECT_EQ(api().post("/api/help", {{"exercise_id", "hello"}}).status, 401);
  const auto bad = api().get("/api/exercises", "forged-token");
  EXPECT_EQ(bad.status, 401);
  EXPECT_EQ(error_code(bad), "invalid_session");
  // 404
  EXPECT_EQ(error_code(api().get("/api/exercises/nope")), "unknown_exercise");
  EXPECT_EQ(api().post("/api/exercises/nope/submit", {{"code", "x"}}).status, 404);
  const auto no_route = api().get("/api/nowhere");
  EXPECT_EQ(no_route.status, 404);
  EXPECT_EQ(error_code(no_route), "no_route");
  EXPECT_EQ(api().get("/api/help/424242", token).status, 404);
  // 400
  EXPECT_EQ(error_code(api().post_raw("/api/exercises/hello/submit", "{oops")), "bad_json");
  EXPECT_EQ(error_code(api().post("/api/exercises/hello/submit", {{"code", 5}})), "bad_field");
  EXPECT_EQ(error_code(api().post("/api/exercises/count-to-five/submit", {{"code", "x"}})),
            "mode_mismatch");
  EXPECT_EQ(error_code(api().post("/api/exercises/hello/submit", {{"line_order", {"x"}}})),
            "mode_mismatch");
  EXPECT_EQ(error_code(api().post("/api/exercises/triple/submit", {{"code", "x"}, {"stdin", "1"}})),
            "mode_mismatch");
  EXPECT_EQ(api().get("/api/exercises/hello/history?limit=-1", token).status, 400);
  // 413
  const auto big = api().post("/api/exercises/hello/submit", {{"code", std::string(70 * 1024, '#')}});
  EXPECT_EQ(big.status, 413);
  EXPECT_EQ(error_code(big), "too_large");
  const auto huge = api().post("/api/console", {{"code", std::string(2 << 20, '#')}});
  EXPECT_EQ(huge.status, 413);
  // 403
  const auto other = fresh_user("other");
  ts->user(other);
  EXPECT_EQ(api().get("/api/exercises/hello/history?user=" + other, token).status, 403);
  EXPECT_EQ(api().get("/api/progress?user=" + other, token).status, 403);
}

TEST_F(ServiceTest, SubmitRecordsHistoryAndProgress) {
  const auto id = fresh_user("sub");
  const auto token = ts->user(id);
  const auto& heads = ts->svc->exercises().at("heads");

  auto r = api().post("/api/exercises/heads/submit", {{"code", "heads = 1"}}, token);
  ASSERT_EQ(r.status, 200) << r.raw;
  EXPECT_EQ(r.body["verdict"], "Incorrect");
  EXPECT_FALSE(r.body["completed"].get<bool>());
  EXPECT_TRUE(r.body.contains("submission_id"));

  r = api().post("/api/exercises/heads/submit", {{"code", *heads.solver}}, token);
  EXPECT_EQ(r.body["verdict"], "Correct");
  EXPECT_TRUE(r.body["completed"].get<bool>());
  EXPECT_EQ(r.body["report"]["rounds"].size(), 3u);

  r = api().post("/api/exercises/heads/submit", {{"code", "heads = 2"}}, token);
  EXPECT_EQ(r.body["verdict"], "Incorrect");
  EXPECT_TRUE(r.body["completed"].get<bool>());  // never reverts

  const auto h = api().get("/api/exercises/heads/history", token);
  ASSERT_EQ(h.status, 200);
  EXPECT_EQ(h.body["total"], 3);
  ASSERT_EQ(h.body["submissions"].size(), 3u);
  EXPECT_EQ(h.body["submissions"][0]["code"], "heads = 1");
  EXPECT_LT(h.body["submissions"][0]["timestamp"].get<std::int64_t>(),
            h.body["submissions"][1]["timestamp"].get<std::int64_t>());
  const auto page = api().get("/api/exercises/heads/history?offset=1&limit=1", token);
  ASSERT_EQ(page.body["submissions"].size(), 1u);
  EXPECT_EQ(page.body["submissions"][0]["verdict"], "Correct");

  const auto d = api().get("/api/exercises/heads", token);
  EXPECT_EQ(d.body["latest_code"], "heads = 2");
  EXPECT_FALSE(api().get("/api/exercises/heads").body.contains("latest_code"));

  const auto p = api().get("/api/progress", token);
  bool found = false;
  for (const auto& e : p.body["exercises"]) {
    if (e["exercise_id"] == "heads") {
      found = true;
      EXPECT_TRUE(e["completed"].get<bool>());
    }
  }
  EXPECT_TRUE(found);
  const auto list = api().get("/api/exercises", token);
  for (const auto& e : list.body["exercises"]) {
    EXPECT_EQ(e["completed"].get<bool>(), e["exercise_id"] == "heads") << e.dump();
  }
}

TEST_F(ServiceTest, AnonymousSubmissionsAreGradedButNotStored) {
  const auto before = ts->svc->store().all_submissions().size();
  const auto r = api().post("/api/exercises/hello/submit", {{"code", "print('Hello, World!')"}});
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.body["verdict"], "Correct");
  EXPECT_FALSE(r.body.contains("submission_id"));
  EXPECT_EQ(ts->svc->store().all_submissions().size(), before);
}

TEST_F(ServiceTest, IdempotencyKeyReplaysTheFirstAnswer) {
  const auto token = ts->user(fresh_user("idem"));
  const std::map<std::string, std::string> key = {{"Idempotency-Key", "abc-1"}};
  const auto a = api().post("/api/exercises/swap/submit", {{"code", "x = y"}}, token, key);
  const auto b = api().post("/api/exercises/swap/submit", {{"code", "x = y"}}, token, key);
  ASSERT_EQ(a.status, 200);
  ASSERT_EQ(b.status, 200);
  EXPECT_EQ(a.body["submission_id"], b.body["submission_id"]);
  EXPECT_EQ(a.body["report"], b.body["report"]);
  EXPECT_EQ(api().get("/api/exercises/swap/history", token).body["total"], 1);
  const auto c = api().post("/api/exercises/swap/submit", {{"code", "y = x"}}, token, key);
  EXPECT_EQ(c.status, 409);
}

TEST_F(ServiceTest, OneJobPerUserAtATime) {
  const auto token = ts->user(fresh_user("busy"));
  const json slow = {{"code", "import time\ntime.sleep(0.8)"}};
  auto first = std::async(std::launch::async, [&] {
    return api().post("/api/exercises/heads/submit", slow, token);
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(300));
  const auto second = api().post("/api/exercises/heads/submit", slow, token);
  EXPECT_EQ(second.status, 429);
  EXPECT_EQ(error_code(second), "busy");
  EXPECT_EQ(first.get().status, 200);
  // Free again afterwards.
  EXPECT_EQ(api().post("/api/exercises/hello/submit", {{"code", "print(1)"}}, token).status, 200);
}

TEST_F(ServiceTest, TrialRunsUseTheTestInputBox) {
  auto r = api().post("/api/exercises/add-two-lines/submit",
                      {{"code", "print(int(input()) * int(input()))"}, {"stdin", "6\n7\n"}});
  ASSERT_EQ(r.status, 200) << r.raw;
  EXPECT_TRUE(r.body["trial"].get<bool>());
  EXPECT_EQ(r.body["stdout"], "42\n");
  EXPECT_FALSE(r.body.contains("verdict"));

  r = api().post("/api/exercises/triple/submit",
                 {{"code", "def triple(x):\n    return x * 4"}, {"args", "5"}});
  ASSERT_EQ(r.status, 200) << r.raw;
  EXPECT_EQ(r.body["call"], "triple(5)");
  EXPECT_EQ(r.body["value"], "20");

  r = api().post("/api/exercises/triple/submit", {{"code", "x = 1"}, {"args", "5"}});
  EXPECT_NE(r.body["error"].get<std::string>().find("NameError"), std::string::npos) << r.raw;
}

TEST_F(ServiceTest, ConsoleRunsCode) {
  const auto r = api().post("/api/console", {{"code", "print(input()[::-1])"}, {"stdin", "abc\n"}});
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.body["status"], "Ok");
  EXPECT_EQ(r.body["stdout"], "cba\n");
  const auto loop = api().post("/api/console", {{"code", "while True: pass"}});
  EXPECT_EQ(loop.body["status"], "TimeLimit");
}

TEST_F(ServiceTest, HelpIsRoutedToTheGuruAndCarriesContext) {
  const auto student = fresh_user("stu");
  const auto guru = fresh_user("guru");
  const auto outsider = fresh_user("out");
  const auto ts_student = ts->user(student);
  const auto ts_guru = ts->user(guru);
  const auto ts_outsider = ts->user(outsider);

  std::vector<std::int64_t> notified;
  ts->svc->on_help_filed([&](const store::HelpThread& t) { notified.push_back(t.thread_id); });

  EXPECT_EQ(api().post("/api/guru", {{"guru_name", student}}, ts_student).status, 400);
  EXPECT_EQ(api().post("/api/guru", {{"guru_name", "ghost-user"}}, ts_student).status, 404);
  ASSERT_EQ(api().post("/api/guru", {{"guru_name", guru}}, ts_student).status, 200);

  api().post("/api/exercises/swap/submit", {{"code", "x = y"}}, ts_student);
  const auto filed = api().post(
      "/api/help", {{"exercise_id", "swap"}, {"message", "why?"}, {"code", "x = y\ny = x"}}, ts_student);
  ASSERT_EQ(filed.status, 201) << filed.raw;
  EXPECT_EQ(filed.body["recipient"], guru);
  EXPECT_EQ(filed.body["attached_code"], "x = y\ny = x");
  const auto tid = std::to_string(filed.body["thread_id"].get<std::int64_t>());
  ASSERT_EQ(notified.size(), 1u);
  ts->svc->on_help_filed(nullptr);

  const auto inbox = api().get("/api/help", ts_guru);
  ASSERT_EQ(inbox.body["threads"].size(), 1u);
  const auto ctx = api().get("/api/help/" + tid + "/context", ts_guru);
  ASSERT_EQ(ctx.status, 200);
  EXPECT_EQ(ctx.body["history"].size(), 1u);
  EXPECT_FALSE(ctx.body["progress"].empty());
  EXPECT_TRUE(ctx.body["related"].empty());

  EXPECT_EQ(api().get("/api/help/" + tid + "/context", ts_student).status, 403);
  EXPECT_EQ(api().get("/api/help/" + tid, ts_outsider).status, 403);
  EXPECT_EQ(api().post("/api/help/" + tid + "/reply", {{"text", "hi"}}, ts_outsider).status, 403);
  EXPECT_EQ(api().post("/api/help/" + tid + "/reply", {{"text", "use a temp"}}, ts_guru).status, 200);
  const auto t = api().get("/api/help/" + tid, ts_student);
  ASSERT_EQ(t.body["replies"].size(), 1u);
  EXPECT_EQ(t.body["replies"][0]["author"], guru);

  // The guru can read the student's history; the outsider cannot.
  EXPECT_EQ(api().get("/api/exercises/swap/history?user=" + student, ts_guru).status, 200);
  EXPECT_EQ(api().get("/api/exercises/swap/history?user=" + student, ts_outsider).status, 403);

  // Without a guru, help goes to the staff queue.
  ASSERT_EQ(api().post("/api/guru", {{"guru_name", nullptr}}, ts_student).status, 200);
  const auto to_staff = api().post("/api/help", {{"exercise_id", "swap"}}, ts_student);
  EXPECT_EQ(to_staff.body["recipient"], "staff");
}

TEST_F(ServiceTest, ScrambleTakesLineTexts) {
  const auto& spec = ts->svc->exercises().at("count-to-five");
  const auto d = api().get("/api/exercises/count-to-five?seed=3");
  ASSERT_EQ(d.status, 200);
  EXPECT_FALSE(d.body.contains("scramble_seed"));
  const auto shown = d.body["scramble_lines"];
  EXPECT_EQ(api().get("/api/exercises/count-to-five?seed=3").body["scramble_lines"], shown);
  auto r = api().post("/api/exercises/count-to-five/submit", {{"line_order", shown}});
  EXPECT_EQ(r.body["verdict"], "Incorrect");
  r = api().post("/api/exercises/count-to-five/submit", {{"line_order", spec.scramble_lines}});
  EXPECT_EQ(r.body["verdict"], "Correct");
  r = api().post("/api/exercises/count-to-five/submit", {{"line_order", {1, 2, 3}}});
  EXPECT_EQ(r.status, 400);
}

TEST_F(ServiceTest, ServiceMatchesTheCommandLine) {
  const auto& specs = ts->svc->exercises();
  for (const auto& [id, code] : std::vector<std::pair<std::string, std::string>>{
           {"swap", "x = y\ny = x"}, {"heads", "heads = people\ntoes = 10"}, {"biggest", "biggest = max(a, b, c)"}}) {
    ASSERT_TRUE(specs.count(id));
    TempDir dir;
    write_file(dir / "solution.py", code);
    const auto cli = run_command(std::string(AUTHORCTL) + " grade " +
                                 shell_quote((kExerciseDir / (id + ".pybox")).string()) + " " +
                                 shell_quote((dir / "solution.py").string()) + " --seed 4242 --json");
    const auto svc = api().post("/api/exercises/" + id + "/submit?seed=4242", {{"code", code}});
    ASSERT_EQ(svc.status, 200);
    EXPECT_EQ(json::parse(cli.output), svc.body["report"]) << id;
  }
}

TEST_F(ServiceTest, NoSolverTextOrCanonicalOrderEverLeaves) {
  const auto result = confidentiality_fuzz(*ts);
  EXPECT_GT(result.requests, 100u);
  for (const auto& v : result.violations) ADD_FAILURE() << v;
}

TEST(LeakDetector, CatchesPlantedSecrets) {
  dsl::ExerciseSpec a, b;
  a.exercise_id = "a";
  a.solver = "def triple(x):\n    return 3 * x";
  b.exercise_id = "b";
  b.scramble_lines = {"one = 1", "two = 2"};
  const auto secrets = secrets_of({{"a", a}, {"b", b}});
  std::vector<std::string> leaks;
  find_leaks({{"fine", "def triple(y):"}, {"order", {"two = 2", "one = 1"}}}, secrets, "", leaks);
  EXPECT_TRUE(leaks.empty());
  find_leaks({{"x", {{"y", "# def triple(x): here"}}}}, secrets, "", leaks);
  find_leaks({{"order", {"one = 1", "two = 2"}}}, secrets, "", leaks);
  find_leaks({{"editor", "one = 1\ntwo = 2"}}, secrets, "", leaks);
  EXPECT_EQ(leaks.size(), 3u);
}

TEST(ServiceSeeds, SeedParameterIsIgnoredOutsideTestMode) {
  TestService prod({}, /*test_mode=*/false);
  auto api = prod.client();
  std::set<std::string> orders;
  for (int i = 0; i < 20; ++i) {
    orders.insert(api.get("/api/exercises/count-to-five?seed=1").body["scramble_lines"].dump());
  }
  EXPECT_GT(orders.size(), 1u);
}

TEST(ServiceLoading, InvalidExercisesAreSkippedWithAWarning) {
  TempDir ex;
  write_file(ex / "good.pybox", "[pyBox solver=\"print(1)\"]");
  write_file(ex / "broken.pybox", "[pyBox solver=\"print(1)\"");
  write_file(ex / "unsolvable.pybox", "[pyBox autotests=\"x\"]");
  service::ServiceConfig c;
  c.exercise_dir = ex.path();
  c.staff = {"boss"};
  TestService t(c);
  EXPECT_EQ(t.svc->exercises().size(), 1u);
  EXPECT_TRUE(t.svc->exercises().count("good"));
  EXPECT_GE(t.svc->load_warnings().size(), 2u);
  const auto token = t.user("boss");
  EXPECT_TRUE(t.client().get("/api/me", token).body["staff"].get<bool>());
}

}  // namespace
}  // namespace pybox::testing

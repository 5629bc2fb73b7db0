#include "pybox/service/service.hpp"

#include <condition_variable>
#include <mutex>
#include <random>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "pybox/common/text.hpp"
#include "pybox/dsl/descriptor.hpp"
#include "pybox/grader/grader.hpp"

namespace pybox::service {

namespace {

using nlohmann::json;

constexpr const char* kSessionCookie = "pybox_session";
constexpr std::size_t kMaxHistoryPage = 100;
constexpr std::size_t kDefaultHistoryPage = 20;

struct ApiError {
  int status;
  std::string code;
  std::string message;
};

// Caps concurrent sandbox work: a global pool that queues, and a per-caller
// limit that refuses.
class JobGate {
 public:
  JobGate(unsigned total, unsigned per_caller) : total_(total), per_caller_(per_caller) {}

  class Ticket {
   public:
    Ticket(JobGate* gate, std::string who) : gate_(gate), who_(std::move(who)) {}
    Ticket(Ticket&& o) noexcept : gate_(std::exchange(o.gate_, nullptr)), who_(std::move(o.who_)) {}
    Ticket(const Ticket&) = delete;
    Ticket& operator=(const Ticket&) = delete;
    Ticket& operator=(Ticket&&) = delete;
    ~Ticket() {
      if (gate_) gate_->release(who_);
    }

   private:
    JobGate* gate_;
    std::string who_;
  };

  std::optional<Ticket> acquire(const std::string& who) {
    std::unique_lock lock(mu_);
    auto& mine = per_caller_active_[who];
    if (mine >= per_caller_) return std::nullopt;
    ++mine;
    cv_.wait(lock, [&] { return active_ < total_; });
    ++active_;
    return std::optional<Ticket>(std::in_place, this, who);
  }

 private:
  void release(const std::string& who) {
    {
      std::lock_guard lock(mu_);
      --active_;
      if (--per_caller_active_[who] == 0) per_caller_active_.erase(who);
    }
    cv_.notify_one();
  }

  std::mutex mu_;
  std::condition_variable cv_;
  unsigned active_ = 0;
  std::map<std::string, unsigned> per_caller_active_;
  const unsigned total_;
  const unsigned per_caller_;
};

std::string dump(const json& j) {
  // Program output may be arbitrary bytes; never fail a response over it.
  return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

json to_json(const store::Submission& s) {
  return {{"submission_id", s.submission_id},
          {"user_id", s.user_id},
          {"exercise_id", s.exercise_id},
          {"timestamp", s.timestamp},
          {"code", s.code},
          {"verdict", grader::to_string(s.report.verdict)},
          {"report", grader::to_json(s.report)}};
}

json to_json(const store::ProgressEntry& p) {
  return {{"exercise_id", p.exercise_id},
          {"completed", p.completed},
          {"first_completed_at", p.first_completed_at ? json(*p.first_completed_at) : json()}};
}

json to_json(const store::HelpThread& t) {
  json replies = json::array();
  for (const auto& r : t.replies) {
    replies.push_back({{"author", r.author}, {"text", r.text}, {"timestamp", r.timestamp}});
  }
  return {{"thread_id", t.thread_id},
          {"user_id", t.user_id},
          {"exercise_id", t.exercise_id},
          {"message", t.message},
          {"attached_code", t.attached_code},
          {"recipient", t.recipient ? json(*t.recipient) : json("staff")},
          {"created_at", t.created_at},
          {"replies", replies}};
}

template <typename T>
json array_of(const std::vector<T>& items) {
  json out = json::array();
  for (const auto& item : items) out.push_back(to_json(item));
  return out;
}

json json_body(const httplib::Request& req) {
  json body;
  try {
    body = json::parse(req.body);
  } catch (const json::exception&) {
    throw ApiError{400, "bad_json", "request body is not valid JSON"};
  }
  if (!body.is_object()) throw ApiError{400, "bad_json", "request body must be a JSON object"};
  return body;
}

std::optional<std::string> string_field(const json& body, const char* key, bool required = false) {
  const auto it = body.find(key);
  if (it == body.end() || it->is_null()) {
    if (required) throw ApiError{400, "missing_field", std::string("'") + key + "' is required"};
    return std::nullopt;
  }
  if (!it->is_string()) {
    throw ApiError{400, "bad_field", std::string("'") + key + "' must be a string"};
  }
  return it->get<std::string>();
}

std::optional<std::string> token_of(const httplib::Request& req) {
  const auto auth = req.get_header_value("Authorization");
  if (auth.rfind("Bearer ", 0) == 0) return auth.substr(7);
  const auto cookies = req.get_header_value("Cookie");
  for (const auto& part : text::split(cookies, ';')) {
    const auto kv = text::trim(part);
    const std::string prefix = std::string(kSessionCookie) + "=";
    if (kv.substr(0, prefix.size()) == prefix) return std::string(kv.substr(prefix.size()));
  }
  return std::nullopt;
}

std::uint64_t parse_u64(const std::string& s, const char* what) {
  try {
    std::size_t used = 0;
    if (!s.empty() && s[0] != '-') {
      const auto v = std::stoull(s, &used);
      if (used == s.size()) return v;
    }
  } catch (...) {
  }
  throw ApiError{400, "bad_parameter", std::string(what) + " must be a nonnegative integer"};
}

}  // namespace

struct Service::Impl {
  ServiceConfig config;
  std::unique_ptr<store::Store> db;
  std::map<std::string, dsl::ExerciseSpec> exercises;
  std::vector<std::string> warnings;
  grader::Grader grader;
  JobGate gate;
  httplib::Server server;
  std::thread thread;
  std::mutex seed_mu;
  std::mt19937_64 seed_gen{std::random_device{}()};
  std::function<void(const store::HelpThread&)> help_hook;
  bool bound = false;

  explicit Impl(ServiceConfig c)
      : config(std::move(c)),
        grader(grader::GraderOptions{config.policy, config.python}),
        gate(config.max_jobs, config.max_jobs_per_user) {
    store::StoreOptions opts;
    opts.path = config.store_path;
    db = std::make_unique<store::Store>(opts);
    for (const auto& path : dsl::list_spec_files(config.exercise_dir)) {
      const auto id = path.stem().string();
      try {
        auto spec = dsl::load_spec_file(path, dsl::ParseMode::Lenient);
        const auto issues = dsl::validate_spec(spec);
        for (const auto& issue : issues) warnings.push_back(id + ": " + issue.message);
        if (dsl::has_errors(issues)) continue;
        db->register_exercise(id);
        exercises.emplace(id, std::move(spec));
      } catch (const std::exception& e) {
        warnings.push_back(id + ": " + e.what());
      }
    }
    db->replace_staff(config.staff);
    routes();
  }

  std::uint64_t fresh_seed() {
    std::lock_guard lock(seed_mu);
    return seed_gen();
  }

  std::uint64_t seed_for(const httplib::Request& req) {
    if (config.test_mode && req.has_param("seed")) return parse_u64(req.get_param_value("seed"), "seed");
    return fresh_seed();
  }

  // nullopt for anonymous callers; a token that does not resolve is an error
  // whatever the endpoint.
  std::optional<std::string> caller(const httplib::Request& req) {
    const auto token = token_of(req);
    if (!token) return std::nullopt;
    auto user = db->resolve_session(*token);
    if (!user) throw ApiError{401, "invalid_session", "session is invalid or expired"};
    return user;
  }

  std::string require_caller(const httplib::Request& req) {
    auto user = caller(req);
    if (!user) throw ApiError{401, "unauthenticated", "sign in to use this endpoint"};
    return *user;
  }

  const dsl::ExerciseSpec& exercise(const std::string& id) {
    const auto it = exercises.find(id);
    if (it == exercises.end()) throw ApiError{404, "unknown_exercise", "no exercise '" + id + "'"};
    return it->second;
  }

  JobGate::Ticket ticket(const httplib::Request& req, const std::optional<std::string>& user) {
    auto t = gate.acquire(user ? "user:" + *user : "anon:" + req.remote_addr);
    if (!t) throw ApiError{429, "busy", "a grading job for this user is already running"};
    return std::move(*t);
  }

  using Handler = std::function<std::pair<int, json>(const httplib::Request&)>;

  // Maps domain errors to status codes and writes the JSON body.
  httplib::Server::Handler wrap(Handler h) {
    return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
      int status = 500;
      json body;
      try {
        std::tie(status, body) = h(req);
      } catch (const ApiError& e) {
        status = e.status;
        body = {{"error", {{"code", e.code}, {"message", e.message}}}};
      } catch (const store::NotFound& e) {
        status = 404;
        body = {{"error", {{"code", "not_found"}, {"message", e.what()}}}};
      } catch (const store::Forbidden& e) {
        status = 403;
        body = {{"error", {{"code", "forbidden"}, {"message", e.what()}}}};
      } catch (const store::Conflict& e) {
        status = 409;
        body = {{"error", {{"code", "conflict"}, {"message", e.what()}}}};
      } catch (const store::InvalidInput& e) {
        status = 400;
        body = {{"error", {{"code", "invalid"}, {"message", e.what()}}}};
      } catch (const json::exception& e) {
        status = 400;
        body = {{"error", {{"code", "bad_field"}, {"message", e.what()}}}};
      } catch (const std::exception& e) {
        status = 500;
        body = {{"error", {{"code", "internal"}, {"message", "internal error"}}}};
      }
      res.status = status;
      res.set_content(dump(body), "application/json");
    };
  }

  std::pair<int, json> register_user(const httplib::Request& req) {
    const json body = json_body(req);
    const auto id = *string_field(body, "user_id", true);
    const auto name = string_field(body, "display_name").value_or(id);
    db->create_user(id, name);
    if (std::find(config.staff.begin(), config.staff.end(), id) != config.staff.end()) {
      db->set_staff(id, true);
    }
    const auto key = db->issue_login_key(id);
    const auto token = db->create_session(id, config.session_ttl_seconds * 1000000);
    return {201, {{"user_id", id}, {"display_name", name}, {"token", token}, {"login_key", key}}};
  }

  std::pair<int, json> new_session(const httplib::Request& req) {
    const json body = json_body(req);
    const auto id = *string_field(body, "user_id", true);
    const auto key = *string_field(body, "login_key", true);
    if (!db->check_login_key(id, key)) {
      throw ApiError{401, "bad_credentials", "unknown user or wrong login key"};
    }
    return {200, {{"token", db->create_session(id, config.session_ttl_seconds * 1000000)}}};
  }

  std::pair<int, json> me(const httplib::Request& req) {
    const auto user = db->find_user(require_caller(req));
    if (!user) throw ApiError{401, "invalid_session", "session is invalid or expired"};
    return {200,
            {{"user_id", user->user_id},
             {"display_name", user->display_name},
             {"guru_id", user->guru_id ? json(*user->guru_id) : json()},
             {"staff", user->staff}}};
  }

  std::pair<int, json> list_exercises(const httplib::Request& req) {
    const auto user = caller(req);
    std::map<std::string, bool> done;
    if (user) {
      for (const auto& p : db->progress(*user, *user)) done[p.exercise_id] = p.completed;
    }
    json list = json::array();
    for (const auto& [id, spec] : exercises) {
      json e = {{"exercise_id", id}, {"mode", dsl::to_string(spec.mode())}};
      if (user) e["completed"] = done[id];
      list.push_back(e);
    }
    return {200, {{"exercises", list}}};
  }

  std::pair<int, json> describe(const httplib::Request& req) {
    const auto user = caller(req);
    const auto& spec = exercise(req.path_params.at("id"));
    json out = dsl::to_json(dsl::client_descriptor(spec, seed_for(req)));
    if (user && spec.mode() != dsl::GradingMode::Scramble) {
      const auto code = db->latest_code(*user, spec.exercise_id);
      out["latest_code"] = code ? json(*code) : json();
    }
    return {200, out};
  }

  // Submission text for a scramble exercise: the line texts in the order the
  // student arranged them. Equal lines are interchangeable, so texts suffice.
  std::string scramble_submission(const json& body) {
    const json& order = body.at("line_order");
    if (!order.is_array()) throw ApiError{400, "bad_field", "'line_order' must be an array"};
    std::vector<std::string> lines;
    for (const auto& item : order) {
      if (!item.is_string()) throw ApiError{400, "bad_field", "line_order items must be strings"};
      lines.push_back(item.get<std::string>());
    }
    return text::join(lines, "\n");
  }

  json submit_response(const std::string& exercise_id, const grader::GradeReport& report,
                       const std::optional<std::string>& user,
                       const std::optional<store::Submission>& sub) {
    bool completed = report.correct();
    if (user) {
      for (const auto& p : db->progress(*user, *user)) {
        if (p.exercise_id == exercise_id) completed = p.completed;
      }
    }
    json out = {{"exercise_id", exercise_id},
                {"verdict", grader::to_string(report.verdict)},
                {"correct", report.correct()},
                {"completed", completed},
                {"report", grader::to_json(report)}};
    if (sub) {
      out["submission_id"] = sub->submission_id;
      out["timestamp"] = sub->timestamp;
    }
    return out;
  }

  std::pair<int, json> trial(const httplib::Request& req, const dsl::ExerciseSpec& spec,
                             const std::string& code, const std::optional<std::string>& stdin_text,
                             const std::optional<std::string>& args,
                             const std::optional<std::string>& user) {
    const auto mode = spec.mode();
    if (stdin_text && args) throw ApiError{400, "mode_mismatch", "send either stdin or args"};
    if (stdin_text && mode != dsl::GradingMode::StdIO) {
      throw ApiError{400, "mode_mismatch", "this exercise has no test input box"};
    }
    if (args && mode != dsl::GradingMode::FunctionCheck) {
      throw ApiError{400, "mode_mismatch", "this exercise takes no test arguments"};
    }
    auto t = ticket(req, user);
    const auto run = grader.trial_run(spec, code, stdin_text, args, seed_for(req));
    json out = {{"exercise_id", spec.exercise_id},
                {"trial", true},
                {"status", sandbox::to_string(run.outcome.status)}};
    if (run.report) {
      out["stdout"] = run.report->stdout_text;
      out["stdout_truncated"] = run.report->stdout_truncated;
      if (run.report->taboo) out["taboo"] = *run.report->taboo;
      if (run.report->error && run.report->error->student_side()) {
        out["error"] = run.report->error->describe();
      }
      if (!run.report->probes.empty()) {
        const auto& p = run.report->probes.front();
        out["call"] = p.expr;
        if (p.ok) {
          out["value"] = p.rendered;
        } else {
          out["error"] = p.error->describe();
        }
      }
    } else if (run.outcome.status == sandbox::Status::TimeLimit) {
      out["error"] = "time limit exceeded";
    } else {
      out["error"] = "program ended unexpectedly (" + run.outcome.termination() + ")";
    }
    return {200, out};
  }

  std::pair<int, json> submit(const httplib::Request& req) {
    const auto user = caller(req);
    const auto& spec = exercise(req.path_params.at("id"));
    const json body = json_body(req);
    const bool scramble = spec.mode() == dsl::GradingMode::Scramble;
    const bool has_code = body.contains("code");
    const bool has_order = body.contains("line_order");
    const auto stdin_text = string_field(body, "stdin");
    const auto args = string_field(body, "args");

    std::string code;
    if (scramble) {
      if (has_code || !has_order || stdin_text || args) {
        throw ApiError{400, "mode_mismatch", "scramble exercises take 'line_order' only"};
      }
      code = scramble_submission(body);
    } else {
      if (has_order || !has_code) {
        throw ApiError{400, "mode_mismatch", "this exercise takes 'code'"};
      }
      code = *string_field(body, "code", true);
    }
    if (code.size() > store::kMaxCodeBytes) {
      throw ApiError{413, "too_large", "code exceeds 64 KiB"};
    }
    if (stdin_text || args) return trial(req, spec, code, stdin_text, args, user);

    std::optional<std::string> key;
    if (user && req.has_header("Idempotency-Key")) {
      key = req.get_header_value("Idempotency-Key");
      if (auto earlier = db->find_by_idempotency_key(*user, *key)) {
        if (earlier->exercise_id != spec.exercise_id || earlier->code != code) {
          throw ApiError{409, "idempotency_conflict", "key was used for a different submission"};
        }
        return {200, submit_response(spec.exercise_id, earlier->report, user, earlier)};
      }
    }

    grader::GradeReport report;
    {
      auto t = ticket(req, user);
      report = grader.grade(spec, code, seed_for(req));
    }
    std::optional<store::Submission> sub;
    if (user) sub = db->record_submission(*user, spec.exercise_id, code, report, key);
    return {200, submit_response(spec.exercise_id, sub ? sub->report : report, user, sub)};
  }

  std::pair<int, json> console(const httplib::Request& req) {
    const auto user = caller(req);
    const json body = json_body(req);
    const auto code = *string_field(body, "code", true);
    const auto stdin_text = string_field(body, "stdin").value_or("");
    if (code.size() > store::kMaxCodeBytes) throw ApiError{413, "too_large", "code exceeds 64 KiB"};
    sandbox::Bundle bundle;
    bundle.files = {{"main.py", code}};
    bundle.argv = {config.python, "-I", "-B", "main.py"};
    auto t = ticket(req, user);
    const auto o = sandbox::execute(bundle, config.policy, stdin_text);
    return {200,
            {{"status", sandbox::to_string(o.status)},
             {"stdout", o.stdout_data},
             {"stderr", o.stderr_data},
             {"stdout_truncated", o.stdout_truncated},
             {"stderr_truncated", o.stderr_truncated},
             {"exit_code", o.exit_code ? json(*o.exit_code) : json()},
             {"signal", o.signal ? json(*o.signal) : json()},
             {"cpu_used", o.cpu_used},
             {"wall_used", o.wall_used}}};
  }

  std::pair<int, json> progress(const httplib::Request& req) {
    const auto me = require_caller(req);
    const auto who = req.has_param("user") ? req.get_param_value("user") : me;
    return {200, {{"user_id", who}, {"exercises", array_of(db->progress(me, who))}}};
  }

  std::pair<int, json> history(const httplib::Request& req) {
    const auto me = require_caller(req);
    const auto& spec = exercise(req.path_params.at("id"));
    const auto who = req.has_param("user") ? req.get_param_value("user") : me;
    const std::size_t offset =
        req.has_param("offset") ? parse_u64(req.get_param_value("offset"), "offset") : 0;
    std::size_t limit = req.has_param("limit")
                            ? parse_u64(req.get_param_value("limit"), "limit")
                            : kDefaultHistoryPage;
    limit = std::min(limit, kMaxHistoryPage);
    const auto total = db->history_size(me, who, spec.exercise_id);
    const auto page = db->history(me, who, spec.exercise_id, offset, limit);
    return {200,
            {{"user_id", who},
             {"exercise_id", spec.exercise_id},
             {"total", total},
             {"offset", offset},
             {"submissions", array_of(page)}}};
  }

  std::pair<int, json> file_help(const httplib::Request& req) {
    const auto me = require_caller(req);
    const json body = json_body(req);
    const auto& spec = exercise(*string_field(body, "exercise_id", true));
    const auto thread = db->file_help(me, spec.exercise_id,
                                      string_field(body, "message").value_or(""),
                                      string_field(body, "code").value_or(""));
    if (help_hook) help_hook(thread);
    return {201, to_json(thread)};
  }

  std::int64_t thread_id(const httplib::Request& req) {
    return static_cast<std::int64_t>(parse_u64(req.path_params.at("tid"), "thread id"));
  }

  std::pair<int, json> routes_help_inbox(const httplib::Request& req) {
    return {200, {{"threads", array_of(db->inbox(require_caller(req)))}}};
  }

  std::pair<int, json> help_thread(const httplib::Request& req) {
    return {200, to_json(db->thread(require_caller(req), thread_id(req)))};
  }

  std::pair<int, json> help_context(const httplib::Request& req) {
    const auto ctx = db->mail_context(require_caller(req), thread_id(req));
    return {200,
            {{"thread", to_json(ctx.thread)},
             {"history", array_of(ctx.history)},
             {"progress", array_of(ctx.progress)},
             {"related", array_of(ctx.related)}}};
  }

  std::pair<int, json> help_reply(const httplib::Request& req) {
    const auto me = require_caller(req);
    const json body = json_body(req);
    return {200, to_json(db->reply(me, thread_id(req), *string_field(body, "text", true)))};
  }

  std::pair<int, json> set_guru(const httplib::Request& req) {
    const auto me = require_caller(req);
    const json body = json_body(req);
    const auto guru = string_field(body, "guru_name");
    db->set_guru(me, guru);
    return {200, {{"user_id", me}, {"guru_id", guru ? json(*guru) : json()}}};
  }

  void routes() {
    using namespace std::placeholders;
    const auto bindh = [this](std::pair<int, json> (Impl::*fn)(const httplib::Request&)) {
      return wrap([this, fn](const httplib::Request& req) { return (this->*fn)(req); });
    };
    server.Post("/api/users", bindh(&Impl::register_user));
    server.Post("/api/session", bindh(&Impl::new_session));
    server.Get("/api/me", bindh(&Impl::me));
    server.Get("/api/exercises", bindh(&Impl::list_exercises));
    server.Get("/api/exercises/:id", bindh(&Impl::describe));
    server.Post("/api/exercises/:id/submit", bindh(&Impl::submit));
    server.Get("/api/exercises/:id/history", bindh(&Impl::history));
    server.Post("/api/console", bindh(&Impl::console));
    server.Get("/api/progress", bindh(&Impl::progress));
    server.Post("/api/help", bindh(&Impl::file_help));
    server.Get("/api/help", bindh(&Impl::routes_help_inbox));
    server.Get("/api/help/:tid", bindh(&Impl::help_thread));
    server.Get("/api/help/:tid/context", bindh(&Impl::help_context));
    server.Post("/api/help/:tid/reply", bindh(&Impl::help_reply));
    server.Post("/api/guru", bindh(&Impl::set_guru));

    server.set_payload_max_length(1 << 20);
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (!res.body.empty()) return;
      const std::string code = res.status == 404 ? "no_route" : "http_error";
      res.set_content(
          dump({{"error", {{"code", code}, {"message", httplib::status_message(res.status)}}}}),
          "application/json");
    });
    server.new_task_queue = [] { return new httplib::ThreadPool(16); };
  }
};

Service::Service(ServiceConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

Service::~Service() { stop(); }

int Service::bind() {
  int port = impl_->config.port;
  if (port == 0) {
    port = impl_->server.bind_to_any_port(impl_->config.host);
  } else if (!impl_->server.bind_to_port(impl_->config.host, port)) {
    port = -1;
  }
  if (port < 0) {
    throw std::runtime_error("cannot listen on " + impl_->config.host + ":" +
                             std::to_string(impl_->config.port));
  }
  impl_->bound = true;
  return port;
}

void Service::serve() { impl_->server.listen_after_bind(); }

int Service::start() {
  const int port = bind();
  impl_->thread = std::thread([this] { serve(); });
  impl_->server.wait_until_ready();
  return port;
}

void Service::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

store::Store& Service::store() { return *impl_->db; }

const std::map<std::string, dsl::ExerciseSpec>& Service::exercises() const {
  return impl_->exercises;
}

const std::vector<std::string>& Service::load_warnings() const { return impl_->warnings; }

void Service::on_help_filed(std::function<void(const store::HelpThread&)> hook) {
  impl_->help_hook = std::move(hook);
}

}  // namespace pybox::service

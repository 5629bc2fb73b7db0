#include "pybox/service/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "pybox/common/text.hpp"

namespace pybox::service {

namespace {

using nlohmann::json;

void parse_listen(ServiceConfig& c, const std::string& value) {
  const auto colon = value.rfind(':');
  if (colon == std::string::npos) throw std::runtime_error("listen must be host:port");
  c.host = value.substr(0, colon);
  try {
    std::size_t used = 0;
    c.port = std::stoi(value.substr(colon + 1), &used);
    if (used != value.size() - colon - 1 || c.port < 0 || c.port > 65535) throw 0;
  } catch (...) {
    throw std::runtime_error("bad port in listen address '" + value + "'");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    double v = std::stod(value, &used);
    if (used == value.size()) return v;
  } catch (...) {
  }
  throw std::runtime_error(key + ": not a number: '" + value + "'");
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  // stoull would quietly wrap a leading minus sign.
  if (value.empty() || value.find_first_not_of("0123456789") != std::string::npos) {
    throw std::runtime_error(key + ": not a nonnegative integer: '" + value + "'");
  }
  try {
    std::size_t used = 0;
    auto v = std::stoull(value, &used);
    if (used == value.size()) return v;
  } catch (...) {
  }
  throw std::runtime_error(key + ": not a nonnegative integer: '" + value + "'");
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true" || value == "yes") return true;
  if (value == "0" || value == "false" || value == "no" || value.empty()) return false;
  throw std::runtime_error(key + ": not a boolean: '" + value + "'");
}

// nlohmann converts -1 to a huge unsigned value without complaint.
template <typename T>
T get_unsigned(const std::string& key, const json& v) {
  if (!v.is_number_unsigned()) throw std::runtime_error(key + " must be a nonnegative integer");
  return v.get<T>();
}

void finish(ServiceConfig& c) {
  try {
    c.policy.validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("bad limits: ") + e.what());
  }
  if (c.max_jobs < 1) throw std::runtime_error("max_jobs must be at least 1");
  if (c.max_jobs_per_user < 1) throw std::runtime_error("max_jobs_per_user must be at least 1");
  if (c.session_ttl_seconds < 1) throw std::runtime_error("session_ttl_seconds must be positive");
}

ServiceConfig config_from_json_unchecked(const std::string& text);

}  // namespace

ServiceConfig config_from_json(const std::string& text) {
  try {
    return config_from_json_unchecked(text);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("bad config: ") + e.what());
  }
}

namespace {

ServiceConfig config_from_json_unchecked(const std::string& text) {
  ServiceConfig c;
  const json j = json::parse(text);
  if (!j.is_object()) throw std::runtime_error("config must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "listen") {
      parse_listen(c, v.get<std::string>());
    } else if (key == "store") {
      c.store_path = v.get<std::string>();
    } else if (key == "exercises") {
      c.exercise_dir = v.get<std::string>();
    } else if (key == "python") {
      c.python = v.get<std::string>();
    } else if (key == "staff") {
      c.staff = v.get<std::vector<std::string>>();
    } else if (key == "test_mode") {
      c.test_mode = v.get<bool>();
    } else if (key == "max_jobs") {
      c.max_jobs = get_unsigned<unsigned>(key, v);
    } else if (key == "max_jobs_per_user") {
      c.max_jobs_per_user = get_unsigned<unsigned>(key, v);
    } else if (key == "session_ttl_seconds") {
      c.session_ttl_seconds = v.get<std::int64_t>();
    } else if (key == "limits") {
      for (const auto& [lk, lv] : v.items()) {
        if (lk == "cpu_seconds") {
          c.policy.cpu_time_limit = lv.get<double>();
        } else if (lk == "wall_seconds") {
          c.policy.wall_time_limit = lv.get<double>();
        } else if (lk == "memory_bytes") {
          c.policy.memory_limit = get_unsigned<std::uint64_t>(lk, lv);
        } else if (lk == "output_bytes") {
          c.policy.output_cap = get_unsigned<std::uint64_t>(lk, lv);
        } else {
          throw std::runtime_error("unknown config key 'limits." + lk + "'");
        }
      }
    } else {
      throw std::runtime_error("unknown config key '" + key + "'");
    }
  }
  finish(c);
  return c;
}

}  // namespace

ServiceConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  ServiceConfig c = config_from_json(ss.str());
  // Relative paths in the file are relative to the file.
  const auto base = path.parent_path();
  if (c.store_path.is_relative()) c.store_path = base / c.store_path;
  if (c.exercise_dir.is_relative()) c.exercise_dir = base / c.exercise_dir;
  return c;
}

void apply_env_overrides(ServiceConfig& c,
                         const std::function<std::optional<std::string>(const char*)>& getenv) {
  if (auto v = getenv("PYBOX_LISTEN")) parse_listen(c, *v);
  if (auto v = getenv("PYBOX_STORE")) c.store_path = *v;
  if (auto v = getenv("PYBOX_EXERCISES")) c.exercise_dir = *v;
  if (auto v = getenv("PYBOX_PYTHON")) c.python = *v;
  if (auto v = getenv("PYBOX_STAFF")) {
    c.staff.clear();
    for (const auto& part : text::split(*v, ',')) {
      const auto name = text::trim(part);
      if (!name.empty()) c.staff.emplace_back(name);
    }
  }
  if (auto v = getenv("PYBOX_TEST_MODE")) c.test_mode = parse_bool("PYBOX_TEST_MODE", *v);
  if (auto v = getenv("PYBOX_CPU_LIMIT")) {
    c.policy.cpu_time_limit = parse_double("PYBOX_CPU_LIMIT", *v);
  }
  if (auto v = getenv("PYBOX_WALL_LIMIT")) {
    c.policy.wall_time_limit = parse_double("PYBOX_WALL_LIMIT", *v);
  }
  if (auto v = getenv("PYBOX_MEMORY_LIMIT")) {
    c.policy.memory_limit = parse_u64("PYBOX_MEMORY_LIMIT", *v);
  }
  if (auto v = getenv("PYBOX_OUTPUT_CAP")) c.policy.output_cap = parse_u64("PYBOX_OUTPUT_CAP", *v);
  if (auto v = getenv("PYBOX_MAX_JOBS")) {
    c.max_jobs = static_cast<unsigned>(parse_u64("PYBOX_MAX_JOBS", *v));
  }
  finish(c);
}

void apply_env_overrides(ServiceConfig& c) {
  apply_env_overrides(c, [](const char* name) -> std::optional<std::string> {
    const char* v = std::getenv(name);
    if (!v) return std::nullopt;
    return std::string(v);
  });
}

}  // namespace pybox::service

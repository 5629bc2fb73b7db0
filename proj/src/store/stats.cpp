#include <algorithm>
#include <cstdio>

#include "pybox/store/store.hpp"

namespace pybox::store {

std::array<Timestamp, 7> nearest_rank_octiles(std::vector<Timestamp> values) {
  std::array<Timestamp, 7> out{};
  if (values.empty()) return out;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  for (std::size_t k = 1; k <= 7; ++k) {
    const std::size_t rank = (k * n + 7) / 8;  // ceil(k*n/8), 1-based
    out[k - 1] = values[std::max<std::size_t>(rank, 1) - 1];
  }
  return out;
}

namespace {

// RFC 4180 quoting for keys; exercise and user ids are usually plain.
std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string hours(Timestamp us) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2fh", static_cast<double>(us) / 3.6e9);
  return buf;
}

}  // namespace

std::string stats_csv(const StatsReport& report) {
  std::string out = "series,key,value\n";
  for (const auto& [key, n] : report.completions) {
    out += "completions," + csv_field(key) + "," + std::to_string(n) + "\n";
  }
  for (const auto& [key, n] : report.submissions) {
    out += "submissions," + csv_field(key) + "," + std::to_string(n) + "\n";
  }
  for (const auto& ex : report.octiles) {
    for (std::size_t k = 0; k < ex.octiles.size(); ++k) {
      out += "octile_" + std::to_string(k + 1) + "," + csv_field(ex.exercise_id) + "," +
             std::to_string(ex.octiles[k]) + "\n";
    }
  }
  return out;
}

std::string stats_text(const StatsReport& report) {
  std::string out = "Completions per exercise\n";
  if (report.completions.empty()) out += "  (none)\n";
  for (const auto& [key, n] : report.completions) {
    out += "  " + std::to_string(n) + "\t" + key + "\n";
  }
  out += "\nSubmissions per user\n";
  if (report.submissions.empty()) out += "  (none)\n";
  for (const auto& [key, n] : report.submissions) {
    out += "  " + std::to_string(n) + "\t" + key + "\n";
  }
  out += "\nTime from registration to completion (octiles 1..7)\n";
  if (report.octiles.empty()) out += "  (none)\n";
  for (const auto& ex : report.octiles) {
    out += "  " + ex.exercise_id + " (n=" + std::to_string(ex.completers) + "):";
    for (auto v : ex.octiles) out += " " + hours(v);
    out += "\n";
  }
  return out;
}

}  // namespace pybox::store

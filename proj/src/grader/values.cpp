#include "pybox/grader/values.hpp"

#include <cmath>
#include <cstdlib>
#include <string>

namespace pybox::grader {

namespace {

double number_of(const nlohmann::json& v) {
  const auto& text = v.at("v").get_ref<const std::string&>();
  if (text == "nan") return std::nan("");
  if (text == "inf") return HUGE_VAL;
  if (text == "-inf") return -HUGE_VAL;
  return std::strtod(text.c_str(), nullptr);
}

bool is_numeric(const std::string& tag) { return tag == "int" || tag == "float"; }

bool sequences_equal(const nlohmann::json& a, const nlohmann::json& b, double rel_tol) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!values_equal(a[i], b[i], rel_tol)) return false;
  }
  return true;
}

}  // namespace

bool floats_close(double a, double b, double rel_tol) {
  if (std::isnan(a) || std::isnan(b)) return std::isnan(a) && std::isnan(b);
  if (a == b) return true;
  if (std::isinf(a) || std::isinf(b)) return false;
  return std::fabs(a - b) <= rel_tol * std::max(std::fabs(a), std::fabs(b));
}

bool values_equal(const nlohmann::json& expected, const nlohmann::json& observed, double rel_tol) {
  if (!expected.is_object() || !observed.is_object()) return expected == observed;
  const auto& te = expected.at("t").get_ref<const std::string&>();
  const auto& to = observed.at("t").get_ref<const std::string&>();

  if (te != to) {
    if (is_numeric(te) && is_numeric(to)) {
      return floats_close(number_of(expected), number_of(observed), rel_tol);
    }
    return false;
  }
  if (te == "float") return floats_close(number_of(expected), number_of(observed), rel_tol);
  if (te == "list" || te == "tuple" || te == "set") {
    return sequences_equal(expected.at("v"), observed.at("v"), rel_tol);
  }
  if (te == "dict") {
    const auto& a = expected.at("v");
    const auto& b = observed.at("v");
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (!values_equal(a[i][0], b[i][0], rel_tol) || !values_equal(a[i][1], b[i][1], rel_tol)) {
        return false;
      }
    }
    return true;
  }
  // Scalars, objects and digests: exact.
  return expected == observed;
}

}  // namespace pybox::grader

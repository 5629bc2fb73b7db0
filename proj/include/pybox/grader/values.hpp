#pragma once

#include <nlohmann/json.hpp>

namespace pybox::grader {

inline constexpr double kFloatRelativeTolerance = 1e-9;

// Structural equality of two harness value trees. Floats (and int/float
// pairs) compare with a relative tolerance; every other kind compares
// exactly, including its type tag.
bool values_equal(const nlohmann::json& expected, const nlohmann::json& observed,
                  double rel_tol = kFloatRelativeTolerance);

bool floats_close(double a, double b, double rel_tol = kFloatRelativeTolerance);

}  // namespace pybox::grader

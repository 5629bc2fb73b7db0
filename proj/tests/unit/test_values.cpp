#include <gtest/gtest.h>

#include <cmath>

#include "pybox/grader/values.hpp"

namespace pybox::grader {
namespace {

using nlohmann::json;

json num(const char* t, const char* v) { return {{"t", t}, {"v", v}}; }

TEST(ValuesEqual, FloatsUseRelativeTolerance) {
  EXPECT_TRUE(values_equal(num("float", "0.30000000000000004"), num("float", "0.3")));
  EXPECT_TRUE(values_equal(num("float", "1e20"), num("float", "1.0000000000001e20")));
  EXPECT_FALSE(values_equal(num("float", "1.0"), num("float", "1.00001")));
  EXPECT_TRUE(values_equal(num("float", "nan"), num("float", "nan")));
  EXPECT_TRUE(values_equal(num("float", "inf"), num("float", "inf")));
  EXPECT_FALSE(values_equal(num("float", "inf"), num("float", "-inf")));
}

TEST(ValuesEqual, IntAndFloatCompareNumerically) {
  EXPECT_TRUE(values_equal(num("int", "2"), num("float", "2.0")));
  EXPECT_FALSE(values_equal(num("int", "2"), num("str", "2")));
  EXPECT_FALSE(values_equal(num("int", "12345678901234567890"), num("int", "12345678901234567891")));
}

TEST(ValuesEqual, ContainersAreStructural) {
  const json a = {{"t", "list"}, {"v", {num("int", "1"), num("float", "0.1")}}};
  const json b = {{"t", "list"}, {"v", {num("int", "1"), num("float", "0.10000000000000001")}}};
  const json tuple = {{"t", "tuple"}, {"v", {num("int", "1"), num("float", "0.1")}}};
  const json shorter = {{"t", "list"}, {"v", {num("int", "1")}}};
  EXPECT_TRUE(values_equal(a, b));
  EXPECT_FALSE(values_equal(a, tuple));
  EXPECT_FALSE(values_equal(a, shorter));
  const json d1 = {{"t", "dict"}, {"v", {{num("str", "k"), num("int", "1")}}}};
  const json d2 = {{"t", "dict"}, {"v", {{num("str", "k"), num("int", "2")}}}};
  EXPECT_FALSE(values_equal(d1, d2));
  EXPECT_TRUE(values_equal(d1, d1));
}

TEST(FloatsClose, Basic) {
  EXPECT_TRUE(floats_close(0.0, 0.0));
  EXPECT_FALSE(floats_close(0.0, 1e-300));
  EXPECT_TRUE(floats_close(1.0, 1.0 + 1e-12));
}

}  // namespace
}  // namespace pybox::grader

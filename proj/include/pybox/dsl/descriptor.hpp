#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pybox/dsl/exercise_spec.hpp"

namespace pybox::dsl {

enum class InputBox { None, Stdin, Args };

// What the browser receives for one exercise. Built from an ExerciseSpec but
// holds no solver, no expected values and no canonical scramble order.
struct ClientDescriptor {
  std::string exercise_id;
  GradingMode mode = GradingMode::StdIO;
  std::string editor;
  // Display order, scramble only. The seed behind it is never sent: the
  // shuffle is public, so the seed would give away the canonical order.
  std::vector<std::string> scramble_lines;
  InputBox input_box = InputBox::None;
  std::vector<std::string> hints;
};

// Throws std::invalid_argument when the spec has validation errors.
ClientDescriptor client_descriptor(const ExerciseSpec& spec, std::uint64_t seed);

nlohmann::json to_json(const ClientDescriptor& d);

}  // namespace pybox::dsl

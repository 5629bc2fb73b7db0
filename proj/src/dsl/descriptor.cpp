#include "pybox/dsl/descriptor.hpp"

#include <stdexcept>

#include "pybox/common/text.hpp"
#include "pybox/scramble/scramble.hpp"

namespace pybox::dsl {

namespace {

std::string_view to_string(InputBox box) {
  switch (box) {
    case InputBox::None: return "none";
    case InputBox::Stdin: return "stdin";
    case InputBox::Args: return "args";
  }
  return "none";
}

}  // namespace

ClientDescriptor client_descriptor(const ExerciseSpec& spec, std::uint64_t seed) {
  const auto issues = validate_spec(spec);
  if (has_errors(issues)) {
    throw std::invalid_argument("exercise '" + spec.exercise_id + "' does not validate");
  }

  ClientDescriptor d;
  d.exercise_id = spec.exercise_id;
  d.mode = spec.mode();
  d.hints = spec.hints;
  switch (d.mode) {
    case GradingMode::StdIO: d.input_box = InputBox::Stdin; break;
    case GradingMode::FunctionCheck: d.input_box = InputBox::Args; break;
    default: d.input_box = InputBox::None;
  }

  if (d.mode == GradingMode::Scramble) {
    d.scramble_lines = scramble::present(spec, seed).lines;
    d.editor = text::join(d.scramble_lines, "\n");
  } else if (spec.initial_code) {
    d.editor = *spec.initial_code;
  }
  return d;
}

nlohmann::json to_json(const ClientDescriptor& d) {
  nlohmann::json j = {
      {"exercise_id", d.exercise_id},
      {"mode", dsl::to_string(d.mode)},
      {"editor", d.editor},
      {"input_box", to_string(d.input_box)},
      {"hints", d.hints},
  };
  if (d.mode == GradingMode::Scramble) {
    j["scramble_lines"] = d.scramble_lines;
  }
  return j;
}

}  // namespace pybox::dsl

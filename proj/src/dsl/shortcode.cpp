#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "pybox/common/text.hpp"
#include "pybox/dsl/exercise_spec.hpp"

namespace pybox::dsl {

namespace {

constexpr std::string_view kOpenTag = "[pyBox";
constexpr std::string_view kBlockSeparator = "---";

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_key_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_key_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

struct RawAttribute {
  std::string key;
  std::string value;
  std::size_t key_offset;
  std::size_t value_offset;
};

class Lexer {
 public:
  explicit Lexer(std::string_view text) : text_(text) {}

  std::vector<RawAttribute> run() {
    skip_space();
    if (text_.substr(pos_, kOpenTag.size()) != kOpenTag) {
      throw ParseError("expected '[pyBox'", pos_);
    }
    pos_ += kOpenTag.size();
    if (!at_end() && !is_space(peek()) && peek() != ']') {
      throw ParseError("expected whitespace or ']' after '[pyBox'", pos_);
    }

    std::vector<RawAttribute> attrs;
    while (true) {
      skip_space();
      if (at_end()) throw ParseError("missing closing bracket", pos_);
      if (peek() == ']') {
        ++pos_;
        break;
      }
      attrs.push_back(attribute());
    }

    skip_space();
    if (!at_end()) throw ParseError("unexpected text after closing bracket", pos_);
    return attrs;
  }

 private:
  bool at_end() const { return pos_ >= text_.size(); }
  char peek() const { return text_[pos_]; }

  void skip_space() {
    while (!at_end() && is_space(peek())) ++pos_;
  }

  RawAttribute attribute() {
    RawAttribute attr;
    attr.key_offset = pos_;
    if (!is_key_start(peek())) {
      throw ParseError(std::string("unexpected character '") + peek() + "'", pos_);
    }
    while (!at_end() && is_key_char(peek())) attr.key.push_back(text_[pos_++]);
    if (at_end() || peek() != '=') {
      throw ParseError("expected '=' after attribute '" + attr.key + "'", pos_);
    }
    ++pos_;
    attr.value_offset = pos_;
    if (!at_end() && peek() == '"') {
      attr.value = quoted();
    } else {
      while (!at_end() && !is_space(peek()) && peek() != ']' && peek() != '"') {
        attr.value.push_back(text_[pos_++]);
      }
      if (attr.value.empty()) {
        throw ParseError("missing value for attribute '" + attr.key + "'", attr.value_offset);
      }
    }
    return attr;
  }

  std::string quoted() {
    const std::size_t open = pos_++;
    std::string out;
    while (true) {
      if (at_end()) throw ParseError("unterminated quoted value", open);
      const char c = text_[pos_];
      if (c == '"') {
        ++pos_;
        return out;
      }
      if (c == '\\' && pos_ + 1 < text_.size()) {
        const char next = text_[pos_ + 1];
        if (next == 'n') {
          out.push_back('\n');
          pos_ += 2;
          continue;
        }
        if (next == '"' || next == '\\') {
          out.push_back(next);
          pos_ += 2;
          continue;
        }
        out.push_back(c);
        ++pos_;
        continue;
      }
      if (is_space(c)) {
        // A run of raw whitespace that spans a line break is layout, not
        // content: it collapses to a single space.
        std::size_t end = pos_;
        bool breaks = false;
        while (end < text_.size() && is_space(text_[end])) {
          breaks = breaks || text_[end] == '\n' || text_[end] == '\r';
          ++end;
        }
        if (breaks) {
          out.push_back(' ');
        } else {
          out.append(text_.substr(pos_, end - pos_));
        }
        pos_ = end;
        continue;
      }
      out.push_back(c);
      ++pos_;
    }
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

template <typename T>
T parse_count(const RawAttribute& attr, T min) {
  const std::string_view v = text::trim(attr.value);
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc{} || ptr != v.data() + v.size() || out < min) {
    throw ParseError("invalid value for '" + attr.key + "'", attr.value_offset);
  }
  return out;
}

std::vector<std::string> split_blocks(std::string_view value) {
  std::vector<std::string> blocks;
  std::vector<std::string> current;
  for (auto& line : text::split(value, '\n')) {
    if (line == kBlockSeparator) {
      blocks.push_back(text::join(current, "\n"));
      current.clear();
    } else {
      current.push_back(std::move(line));
    }
  }
  blocks.push_back(text::join(current, "\n"));
  return blocks;
}

std::vector<std::string> split_nonblank_lines(std::string_view value, bool trim_lines) {
  std::vector<std::string> out;
  for (auto& line : text::split(value, '\n')) {
    if (text::trim(line).empty()) continue;
    out.push_back(trim_lines ? std::string(text::trim(line)) : std::move(line));
  }
  return out;
}

std::vector<std::string> split_names(std::string_view value) {
  std::vector<std::string> out;
  std::string current;
  for (char c : value) {
    if (c == ',' || is_space(c)) {
      if (!current.empty()) out.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

std::string escape(std::string_view value) {
  std::string out;
  out.reserve(value.size() + 8);
  for (char c : value) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '"': out += "\\\""; break;
      case '\n': out += "\\n"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(GradingMode mode) {
  switch (mode) {
    case GradingMode::VariableCheck: return "VariableCheck";
    case GradingMode::StdIO: return "StdIO";
    case GradingMode::FunctionCheck: return "FunctionCheck";
    case GradingMode::Scramble: return "Scramble";
    case GradingMode::RequiredError: return "RequiredError";
    case GradingMode::CustomChecker: return "CustomChecker";
  }
  return "?";
}

GradingMode ExerciseSpec::mode() const {
  if (!scramble_lines.empty()) return GradingMode::Scramble;
  if (required_error) return GradingMode::RequiredError;
  if (checker) return GradingMode::CustomChecker;
  if (!test_inputs.empty()) return GradingMode::StdIO;
  if (!autotests.empty()) {
    const bool calls = std::any_of(autotests.begin(), autotests.end(), [](const std::string& t) {
      return t.find('(') != std::string::npos;
    });
    return calls ? GradingMode::FunctionCheck : GradingMode::VariableCheck;
  }
  return GradingMode::StdIO;
}

ExerciseSpec parse_shortcode(std::string_view text, ParseMode mode, std::string exercise_id) {
  ExerciseSpec spec;
  spec.exercise_id = std::move(exercise_id);

  std::vector<std::string> seen;
  for (auto& attr : Lexer(text).run()) {
    if (std::find(seen.begin(), seen.end(), attr.key) != seen.end()) {
      throw ParseError("duplicate attribute '" + attr.key + "'", attr.key_offset);
    }
    seen.push_back(attr.key);

    const std::string& k = attr.key;
    if (k == "repeats") {
      spec.repeats = parse_count<std::uint32_t>(attr, 1);
    } else if (k == "precode") {
      spec.precode = std::move(attr.value);
    } else if (k == "autotests") {
      spec.autotests = split_nonblank_lines(attr.value, true);
    } else if (k == "inputs") {
      spec.test_inputs = split_blocks(attr.value);
    } else if (k == "solver") {
      spec.solver = std::move(attr.value);
    } else if (k == "initial_code") {
      spec.initial_code = std::move(attr.value);
    } else if (k == "max_edit") {
      spec.max_edit = parse_count<std::uint32_t>(attr, 0);
    } else if (k == "taboo") {
      spec.taboo = split_names(attr.value);
    } else if (k == "required_error") {
      spec.required_error = std::string(text::trim(attr.value));
    } else if (k == "checker") {
      spec.checker = std::move(attr.value);
    } else if (k == "scramble") {
      spec.scramble_lines = split_nonblank_lines(attr.value, false);
    } else if (k == "hints") {
      spec.hints = split_blocks(attr.value);
    } else if (mode == ParseMode::Strict) {
      throw ParseError("unknown attribute '" + k + "'", attr.key_offset);
    } else {
      spec.unknown_attributes.push_back(k);
    }
  }
  return spec;
}

std::string to_shortcode(const ExerciseSpec& spec) {
  std::string out(kOpenTag);
  const auto emit = [&](std::string_view key, std::string_view value) {
    out += ' ';
    out += key;
    out += "=\"";
    out += escape(value);
    out += '"';
  };
  const std::string block_sep = "\n" + std::string(kBlockSeparator) + "\n";

  if (spec.repeats != 1) emit("repeats", std::to_string(spec.repeats));
  if (!spec.precode.empty()) emit("precode", spec.precode);
  if (!spec.autotests.empty()) emit("autotests", text::join(spec.autotests, "\n"));
  if (!spec.test_inputs.empty()) emit("inputs", text::join(spec.test_inputs, block_sep));
  if (spec.solver) emit("solver", *spec.solver);
  if (spec.initial_code) emit("initial_code", *spec.initial_code);
  if (spec.max_edit) emit("max_edit", std::to_string(*spec.max_edit));
  if (!spec.taboo.empty()) emit("taboo", text::join(spec.taboo, ","));
  if (spec.required_error) emit("required_error", *spec.required_error);
  if (spec.checker) emit("checker", *spec.checker);
  if (!spec.scramble_lines.empty()) emit("scramble", text::join(spec.scramble_lines, "\n"));
  if (!spec.hints.empty()) emit("hints", text::join(spec.hints, block_sep));
  out += ']';
  return out;
}

ExerciseSpec load_spec_file(const std::filesystem::path& path, ParseMode mode) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream body;
  body << in.rdbuf();
  return parse_shortcode(body.str(), mode, path.stem().string());
}

std::vector<std::filesystem::path> list_spec_files(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == kSpecExtension) {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end(),
            [](const auto& a, const auto& b) { return a.stem() < b.stem(); });
  return files;
}

}  // namespace pybox::dsl

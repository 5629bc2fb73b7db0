#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace pybox::text {

// Decodes UTF-8 into code points. Bytes that are not part of a valid
// sequence decode to U+DC80 + byte so distinct inputs stay distinct.
std::u32string decode_utf8(std::string_view s);

std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

std::string_view trim(std::string_view s);
bool is_identifier(std::string_view s);

// Line endings to '\n', trailing whitespace stripped per line, trailing blank
// lines dropped. Used for stdin/stdout comparison.
std::string normalize_output(std::string_view s);

}  // namespace pybox::text

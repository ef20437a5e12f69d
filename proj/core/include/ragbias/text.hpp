#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace ragbias {

enum class Tokenizer { English, CjkBigram };

std::string_view to_string(Tokenizer t);
Tokenizer parse_tokenizer(std::string_view s);

// English: ASCII-lowercased runs of letters/digits; non-ASCII codepoints are
// token characters unless they are common Unicode whitespace/punctuation.
// CjkBigram: consecutive codepoint bigrams over the punctuation-stripped
// text, the dictionary-free baseline for Japanese/Chinese.
std::vector<std::string> tokenize(std::string_view text, Tokenizer t);

std::string trim(std::string_view s);
std::string ascii_lower(std::string_view s);

// Decodes UTF-8 into codepoints; invalid bytes decode as U+FFFD.
std::vector<char32_t> utf8_decode(std::string_view s);
void utf8_append(std::string& out, char32_t cp);

}  // namespace ragbias

#include "ragbias/text.hpp"

#include <cctype>

#include "ragbias/error.hpp"

namespace ragbias {
namespace {

bool is_space_cp(char32_t c) {
  if (c == U' ' || c == U'\t' || c == U'\n' || c == U'\r' || c == U'\f' ||
      c == U'\v') {
    return true;
  }
  // NBSP, ogham, general punctuation spaces, line/para separators,
  // narrow nbsp, math space, ideographic space.
  return c == 0x00A0 || c == 0x1680 || (c >= 0x2000 && c <= 0x200A) ||
         c == 0x2028 || c == 0x2029 || c == 0x202F || c == 0x205F ||
         c == 0x3000;
}

bool is_punct_cp(char32_t c) {
  if (c < 0x80) return std::ispunct(static_cast<unsigned char>(c)) != 0;
  // General punctuation, CJK symbols & punctuation, fullwidth punctuation
  // subranges, halfwidth forms punctuation.
  if (c >= 0x2010 && c <= 0x205E) return true;
  if (c >= 0x3001 && c <= 0x303F) return true;
  if (c >= 0xFF01 && c <= 0xFF0F) return true;
  if (c >= 0xFF1A && c <= 0xFF20) return true;
  if (c >= 0xFF3B && c <= 0xFF40) return true;
  if (c >= 0xFF5B && c <= 0xFF65) return true;
  return false;
}

}  // namespace

std::string_view to_string(Tokenizer t) {
  switch (t) {
    case Tokenizer::English: return "english";
    case Tokenizer::CjkBigram: return "cjk_bigram";
  }
  return "english";
}

Tokenizer parse_tokenizer(std::string_view s) {
  if (s == "english") return Tokenizer::English;
  if (s == "cjk_bigram") return Tokenizer::CjkBigram;
  throw ConfigError("unknown tokenizer: " + std::string(s));
}

std::vector<char32_t> utf8_decode(std::string_view s) {
  std::vector<char32_t> out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    unsigned char b0 = s[i];
    char32_t cp = 0xFFFD;
    std::size_t len = 1;
    if (b0 < 0x80) {
      cp = b0;
    } else if ((b0 >> 5) == 0x6 && i + 1 < s.size()) {
      cp = (b0 & 0x1F) << 6 | (s[i + 1] & 0x3F);
      len = 2;
    } else if ((b0 >> 4) == 0xE && i + 2 < s.size()) {
      cp = (b0 & 0x0F) << 12 | (s[i + 1] & 0x3F) << 6 | (s[i + 2] & 0x3F);
      len = 3;
    } else if ((b0 >> 3) == 0x1E && i + 3 < s.size()) {
      cp = (b0 & 0x07) << 18 | (s[i + 1] & 0x3F) << 12 |
           (s[i + 2] & 0x3F) << 6 | (s[i + 3] & 0x3F);
      len = 4;
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

void utf8_append(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

std::vector<std::string> tokenize(std::string_view text, Tokenizer t) {
  const std::vector<char32_t> cps = utf8_decode(text);
  std::vector<std::string> tokens;
  if (t == Tokenizer::English) {
    std::string cur;
    auto flush = [&] {
      if (!cur.empty()) {
        tokens.push_back(cur);
        cur.clear();
      }
    };
    for (char32_t c : cps) {
      if (c < 0x80) {
        unsigned char uc = static_cast<unsigned char>(c);
        if (std::isalnum(uc)) {
          cur.push_back(static_cast<char>(std::tolower(uc)));
        } else {
          flush();
        }
      } else if (is_space_cp(c) || is_punct_cp(c)) {
        flush();
      } else {
        utf8_append(cur, c);
      }
    }
    flush();
    return tokens;
  }

  // CjkBigram: strip whitespace/punctuation, lowercase ASCII, bigram the rest.
  std::vector<char32_t> kept;
  kept.reserve(cps.size());
  for (char32_t c : cps) {
    if (is_space_cp(c) || is_punct_cp(c)) continue;
    if (c < 0x80) c = std::tolower(static_cast<unsigned char>(c));
    kept.push_back(c);
  }
  if (kept.size() == 1) {
    std::string one;
    utf8_append(one, kept[0]);
    tokens.push_back(one);
    return tokens;
  }
  for (std::size_t i = 0; i + 1 < kept.size(); ++i) {
    std::string bi;
    utf8_append(bi, kept[i]);
    utf8_append(bi, kept[i + 1]);
    tokens.push_back(std::move(bi));
  }
  return tokens;
}

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace ragbias

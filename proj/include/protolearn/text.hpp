#pragma once

#include <charconv>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "protolearn/error.hpp"

namespace protolearn::text {

inline std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.emplace_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

inline std::optional<std::int64_t> parse_int(std::string_view s) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

// One logical line of a document: 1-based line number plus whitespace tokens.
struct Line {
  std::size_t number = 0;
  std::vector<std::string> tokens;
};

// Splits a document into non-empty, non-comment lines.
inline std::vector<Line> lines(std::string_view doc) {
  std::vector<Line> out;
  std::size_t number = 0;
  std::size_t start = 0;
  while (start <= doc.size()) {
    std::size_t end = doc.find('\n', start);
    if (end == std::string_view::npos) end = doc.size();
    ++number;
    std::string_view raw = doc.substr(start, end - start);
    if (auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    auto toks = split_ws(raw);
    if (!toks.empty()) out.push_back({number, std::move(toks)});
    if (end == doc.size()) break;
    start = end + 1;
  }
  return out;
}

// Checks the `<kind> <version>` header that opens every document.
inline void expect_header(const std::vector<Line>& ls, std::string_view kind, int version) {
  if (ls.empty()) throw ParseError(1, "header", "empty document, expected '" + std::string(kind) + "'");
  const auto& h = ls.front();
  if (h.tokens.size() != 2 || h.tokens[0] != kind)
    throw ParseError(h.number, "header", "expected '" + std::string(kind) + " <version>'");
  auto v = parse_int(h.tokens[1]);
  if (!v) throw ParseError(h.number, "version", "not an integer: " + h.tokens[1]);
  if (*v > version)
    throw ParseError(h.number, "version",
                     "unsupported version " + h.tokens[1] + " (reader supports up to " + std::to_string(version) + ")");
  if (*v < 1) throw ParseError(h.number, "version", "invalid version " + h.tokens[1]);
}

inline std::int64_t require_int(const Line& l, std::string_view field, std::string_view value) {
  auto v = parse_int(value);
  if (!v) throw ParseError(l.number, std::string(field), "expected integer, got '" + std::string(value) + "'");
  return *v;
}

} // namespace protolearn::text

#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace coa {

inline bool starts_with(std::string_view s, std::string_view prefix) {
  return s.size() >= prefix.size() && s.compare(0, prefix.size(), prefix) == 0;
}

inline bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

inline std::string_view trim_view(std::string_view s) {
  size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\n' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\n' || s[e - 1] == '\r')) --e;
  return s.substr(b, e - b);
}

inline std::string trim(std::string_view s) { return std::string(trim_view(s)); }

// Strips at most one trailing newline; used when embedding process output
// between sentinel lines.
inline std::string_view chomp_view(std::string_view s) {
  if (ends_with(s, "\r\n")) return s.substr(0, s.size() - 2);
  if (ends_with(s, "\n")) return s.substr(0, s.size() - 1);
  return s;
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

// Default token estimator: ceil(bytes / 4).
inline std::uint64_t token_estimate(std::string_view text) {
  return (static_cast<std::uint64_t>(text.size()) + 3) / 4;
}

}  // namespace coa

#pragma once

#include <charconv>
#include <optional>
#include <string>
#include <string_view>

namespace malpipe {

// Shortest decimal that round-trips the exact 64-bit value.
inline std::string format_double(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

// Parses the entire string as a double; nullopt when anything is left over.
inline std::optional<double> parse_double(std::string_view s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto r = std::from_chars(first, last, v);
  if (r.ec != std::errc{} || r.ptr != last) return std::nullopt;
  return v;
}

}  // namespace malpipe

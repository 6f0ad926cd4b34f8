#pragma once

#include <charconv>
#include <cstdio>
#include <string>

namespace armington {

/// Shortest representation that round-trips; plain notation for whole
/// numbers below 1e15.
inline std::string exact(double v) {
  char buf[40];
  const bool whole = v > -1e15 && v < 1e15 && v == static_cast<double>(static_cast<long long>(v));
  const auto r = whole ? std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed)
                       : std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string fixed(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  std::string s = buf;
  if (s == "-0" || s.find_first_not_of("-0.") == std::string::npos) {
    if (s.front() == '-') s.erase(0, 1);
  }
  return s;
}

}  // namespace armington

#pragma once

#include <charconv>
#include <string>

namespace slide {

// Shortest decimal form of a double that round-trips exactly.
inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace slide

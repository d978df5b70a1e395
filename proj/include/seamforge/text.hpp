#pragma once

#include <charconv>
#include <string>

namespace seamforge {

// Shortest decimal form that parses back to the same double.
inline std::string fmt_num(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return {buf, r.ptr};
}

}  // namespace seamforge

#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace imf {

// Error categories double as CLI exit codes (0 = success, 1 = unexpected).
enum class ErrorCategory {
  dimension = 2,
  contract = 3,
  numeric = 4,
  config = 5,
  parse = 6,
  io = 7,
  degeneracy = 8,
  alignment = 9,
  training = 10,
  registration = 11,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory cat, const std::string& msg)
      : std::runtime_error(msg), category(cat) {}
  ErrorCategory category;
};

inline const char* category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::dimension: return "dimension";
    case ErrorCategory::contract: return "contract";
    case ErrorCategory::numeric: return "numeric";
    case ErrorCategory::config: return "config";
    case ErrorCategory::parse: return "parse";
    case ErrorCategory::io: return "io";
    case ErrorCategory::degeneracy: return "degeneracy";
    case ErrorCategory::alignment: return "alignment";
    case ErrorCategory::training: return "training";
    case ErrorCategory::registration: return "registration";
  }
  return "unknown";
}

namespace detail {
inline void msg_append(std::ostringstream&) {}
template <typename T, typename... Rest>
void msg_append(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  msg_append(os, rest...);
}
}  // namespace detail

template <typename... Parts>
[[noreturn]] void raise(ErrorCategory cat, const Parts&... parts) {
  std::ostringstream os;
  detail::msg_append(os, parts...);
  throw Error(cat, os.str());
}

template <typename... Parts>
void require(bool cond, ErrorCategory cat, const Parts&... parts) {
  if (!cond) raise(cat, parts...);
}

}  // namespace imf

#pragma once

#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>
#include <string_view>

namespace biascope::log {

enum class Level { Error = 0, Info = 1, Debug = 2 };

// Level comes from BIASCOPE_LOG={error,info,debug}; default info.
inline Level& threshold() {
  static Level level = [] {
    const char* env = std::getenv("BIASCOPE_LOG");
    if (env == nullptr) return Level::Info;
    std::string_view v(env);
    if (v == "error") return Level::Error;
    if (v == "debug") return Level::Debug;
    return Level::Info;
  }();
  return level;
}

template <typename... Args>
void write(Level level, std::string_view tag, const Args&... args) {
  if (static_cast<int>(level) > static_cast<int>(threshold())) return;
  std::ostringstream oss;
  oss << "[biascope " << tag << "] ";
  (oss << ... << args);
  oss << '\n';
  std::cerr << oss.str();
}

template <typename... Args>
void error(const Args&... args) { write(Level::Error, "error", args...); }
template <typename... Args>
void warn(const Args&... args) { write(Level::Info, "warn", args...); }
template <typename... Args>
void info(const Args&... args) { write(Level::Info, "info", args...); }
template <typename... Args>
void debug(const Args&... args) { write(Level::Debug, "debug", args...); }

}  // namespace biascope::log

#pragma once

// Minimal leveled logging to stderr. Verbosity comes from CTCASR_LOG
// (quiet | error | info | debug; default info).

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string_view>

namespace ctcasr::log {

enum class Level { quiet = 0, error = 1, info = 2, debug = 3 };

inline Level level_from_env() {
  const char* v = std::getenv("CTCASR_LOG");
  if (!v) return Level::info;
  const std::string_view s(v);
  if (s == "quiet") return Level::quiet;
  if (s == "error") return Level::error;
  if (s == "debug") return Level::debug;
  return Level::info;
}

inline Level& threshold() {
  static Level level = level_from_env();
  return level;
}

inline void set_level(Level l) { threshold() = l; }

template <typename... Args>
void write(Level l, const Args&... args) {
  if (static_cast<int>(l) > static_cast<int>(threshold())) return;
  std::ostringstream os;
  (os << ... << args);
  static std::mutex mu;
  std::lock_guard lock(mu);
  std::cerr << os.str() << '\n';
}

template <typename... Args>
void error(const Args&... args) { write(Level::error, args...); }
template <typename... Args>
void info(const Args&... args) { write(Level::info, args...); }
template <typename... Args>
void debug(const Args&... args) { write(Level::debug, args...); }

}  // namespace ctcasr::log

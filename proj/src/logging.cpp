#include "quadtrack/logging.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string_view>

namespace quadtrack {

namespace {

LogLevel from_env() {
  const char* v = std::getenv("QUADTRACK_LOG");
  if (!v) return LogLevel::Warn;
  const std::string_view s(v);
  if (s == "error") return LogLevel::Error;
  if (s == "info") return LogLevel::Info;
  if (s == "debug") return LogLevel::Debug;
  return LogLevel::Warn;
}

std::atomic<int>& level_storage() {
  static std::atomic<int> level{static_cast<int>(from_env())};
  return level;
}

constexpr const char* kNames[] = {"error", "warn", "info", "debug"};

}  // namespace

LogLevel log_level() { return static_cast<LogLevel>(level_storage().load()); }

void set_log_level(LogLevel level) { level_storage().store(static_cast<int>(level)); }

void log_message(LogLevel level, const std::string& msg) {
  if (static_cast<int>(level) > level_storage().load()) return;
  static std::mutex m;
  std::lock_guard<std::mutex> lock(m);
  std::cerr << "[" << kNames[static_cast<int>(level)] << "] " << msg << "\n";
}

}  // namespace quadtrack

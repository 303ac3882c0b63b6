#pragma once

#include <string>

namespace quadtrack {

enum class LogLevel { Error = 0, Warn = 1, Info = 2, Debug = 3 };

/// Read once from QUADTRACK_LOG (error | warn | info | debug); default warn.
LogLevel log_level();
void set_log_level(LogLevel level);

void log_message(LogLevel level, const std::string& msg);
inline void log_error(const std::string& msg) { log_message(LogLevel::Error, msg); }
inline void log_warn(const std::string& msg) { log_message(LogLevel::Warn, msg); }
inline void log_info(const std::string& msg) { log_message(LogLevel::Info, msg); }
inline void log_debug(const std::string& msg) { log_message(LogLevel::Debug, msg); }

}  // namespace quadtrack

#pragma once

#include <string>

namespace em {

enum class LogLevel { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3 };

// Default threshold is warn; override with EM_LOG=debug|info|warn|error.
void log_message(LogLevel level, const std::string& who, const std::string& msg);

void set_log_process_name(const std::string& name);

#define EM_LOG_DEBUG(who, msg) ::em::log_message(::em::LogLevel::kDebug, (who), (msg))
#define EM_LOG_INFO(who, msg) ::em::log_message(::em::LogLevel::kInfo, (who), (msg))
#define EM_LOG_WARN(who, msg) ::em::log_message(::em::LogLevel::kWarn, (who), (msg))
#define EM_LOG_ERROR(who, msg) ::em::log_message(::em::LogLevel::kError, (who), (msg))

}  // namespace em

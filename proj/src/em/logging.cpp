#include "em/logging.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <mutex>

#include "em/timeutil.hpp"

namespace em {

static LogLevel g_threshold = [] {
    const char* env = std::getenv("EM_LOG");
    if (!env) return LogLevel::kWarn;
    if (std::strcmp(env, "debug") == 0) return LogLevel::kDebug;
    if (std::strcmp(env, "info") == 0) return LogLevel::kInfo;
    if (std::strcmp(env, "error") == 0) return LogLevel::kError;
    return LogLevel::kWarn;
}();

static std::string g_process_name;
static std::mutex g_mutex;

void set_log_process_name(const std::string& name) {
    std::lock_guard<std::mutex> lk(g_mutex);
    g_process_name = name;
}

void log_message(LogLevel level, const std::string& who, const std::string& msg) {
    if (level < g_threshold) return;
    static const char* names[] = {"DEBUG", "INFO", "WARN", "ERROR"};
    std::lock_guard<std::mutex> lk(g_mutex);
    std::string tag = g_process_name.empty() ? who : g_process_name + "/" + who;
    std::fprintf(stderr, "%s %-5s [%s] %s\n", format_iso8601(wall_now_ms()).c_str(),
                 names[static_cast<int>(level)], tag.c_str(), msg.c_str());
}

}  // namespace em

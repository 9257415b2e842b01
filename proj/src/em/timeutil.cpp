#include "em/timeutil.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>

namespace em {

int64_t wall_now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

// Howard Hinnant's civil-date algorithms; avoids timegm portability traps.
static int64_t days_from_civil(int64_t y, int64_t m, int64_t d) {
    y -= m <= 2;
    const int64_t era = (y >= 0 ? y : y - 399) / 400;
    const int64_t yoe = y - era * 400;
    const int64_t doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const int64_t doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + doe - 719468;
}

static void civil_from_days(int64_t z, int64_t& y, int64_t& m, int64_t& d) {
    z += 719468;
    const int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const int64_t doe = z - era * 146097;
    const int64_t yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    y = yoe + era * 400;
    const int64_t doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const int64_t mp = (5 * doy + 2) / 153;
    d = doy - (153 * mp + 2) / 5 + 1;
    m = mp + (mp < 10 ? 3 : -9);
    y += (m <= 2);
}

std::string format_iso8601(int64_t epoch_ms) {
    int64_t ms = epoch_ms % 1000;
    int64_t secs = epoch_ms / 1000;
    if (ms < 0) {
        ms += 1000;
        secs -= 1;
    }
    int64_t days = secs / 86400;
    int64_t sod = secs % 86400;
    if (sod < 0) {
        sod += 86400;
        days -= 1;
    }
    int64_t y, mo, d;
    civil_from_days(days, y, mo, d);
    char buf[64];
    if (ms != 0) {
        std::snprintf(buf, sizeof(buf), "%04lld-%02lld-%02lldT%02lld:%02lld:%02lld.%03lldZ",
                      (long long)y, (long long)mo, (long long)d, (long long)(sod / 3600),
                      (long long)(sod % 3600 / 60), (long long)(sod % 60), (long long)ms);
    } else {
        std::snprintf(buf, sizeof(buf), "%04lld-%02lld-%02lldT%02lld:%02lld:%02lldZ", (long long)y,
                      (long long)mo, (long long)d, (long long)(sod / 3600),
                      (long long)(sod % 3600 / 60), (long long)(sod % 60));
    }
    return buf;
}

std::optional<int64_t> parse_iso8601(const std::string& s) {
    int y = 0, mo = 0, d = 0, h = 0, mi = 0;
    double sec = 0.0;
    int n = 0;
    // date-only form is accepted (midnight UTC)
    if (std::sscanf(s.c_str(), "%4d-%2d-%2dT%2d:%2d:%lf%n", &y, &mo, &d, &h, &mi, &sec, &n) >= 6) {
        // trailing zone: 'Z', '+hh:mm', '-hh:mm' or nothing (treated as UTC)
        int64_t offset_min = 0;
        std::string rest = s.substr(static_cast<size_t>(n));
        if (!rest.empty() && rest[0] != 'Z' && (rest[0] == '+' || rest[0] == '-')) {
            int oh = 0, om = 0;
            if (std::sscanf(rest.c_str() + 1, "%2d:%2d", &oh, &om) >= 1) {
                offset_min = oh * 60 + om;
                if (rest[0] == '-') offset_min = -offset_min;
            }
        }
        int64_t days = days_from_civil(y, mo, d);
        double total =
            static_cast<double>(days) * 86400.0 + h * 3600.0 + mi * 60.0 + sec - offset_min * 60.0;
        return static_cast<int64_t>(total * 1000.0 + (total >= 0 ? 0.5 : -0.5));
    }
    if (std::sscanf(s.c_str(), "%4d-%2d-%2d", &y, &mo, &d) == 3 && s.size() == 10) {
        return days_from_civil(y, mo, d) * 86400000;
    }
    return std::nullopt;
}

std::optional<int64_t> parse_timestamp(const std::string& s) {
    if (s.empty()) return std::nullopt;
    if (auto iso = parse_iso8601(s)) return iso;
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') return std::nullopt;
    if (v < 1e11 && v > -1e11) return static_cast<int64_t>(v * 1000.0);
    return static_cast<int64_t>(v);
}

}  // namespace em

#include "em/common.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>

namespace em {

std::string to_hex(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

static const char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string base64_encode(const std::string& raw) {
    std::string out;
    out.reserve((raw.size() + 2) / 3 * 4);
    size_t i = 0;
    while (i + 3 <= raw.size()) {
        uint32_t n = (static_cast<unsigned char>(raw[i]) << 16) |
                     (static_cast<unsigned char>(raw[i + 1]) << 8) |
                     static_cast<unsigned char>(raw[i + 2]);
        out.push_back(kB64[(n >> 18) & 63]);
        out.push_back(kB64[(n >> 12) & 63]);
        out.push_back(kB64[(n >> 6) & 63]);
        out.push_back(kB64[n & 63]);
        i += 3;
    }
    size_t rem = raw.size() - i;
    if (rem == 1) {
        uint32_t n = static_cast<unsigned char>(raw[i]) << 16;
        out.push_back(kB64[(n >> 18) & 63]);
        out.push_back(kB64[(n >> 12) & 63]);
        out.push_back('=');
        out.push_back('=');
    } else if (rem == 2) {
        uint32_t n = (static_cast<unsigned char>(raw[i]) << 16) |
                     (static_cast<unsigned char>(raw[i + 1]) << 8);
        out.push_back(kB64[(n >> 18) & 63]);
        out.push_back(kB64[(n >> 12) & 63]);
        out.push_back(kB64[(n >> 6) & 63]);
        out.push_back('=');
    }
    return out;
}

std::string base64_decode(const std::string& enc) {
    static int rev[256];
    static bool init = [] {
        for (int i = 0; i < 256; ++i) rev[i] = -1;
        for (int i = 0; i < 64; ++i) rev[static_cast<unsigned char>(kB64[i])] = i;
        return true;
    }();
    (void)init;
    std::string out;
    out.reserve(enc.size() / 4 * 3);
    uint32_t acc = 0;
    int bits = 0;
    for (char c : enc) {
        if (c == '=' || c == '\n' || c == '\r') continue;
        int v = rev[static_cast<unsigned char>(c)];
        if (v < 0) continue;
        acc = (acc << 6) | static_cast<uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<char>((acc >> bits) & 0xff));
        }
    }
    return out;
}

std::string random_id(const char* prefix) {
    static std::atomic<uint64_t> counter{0};
    static const uint64_t boot = [] {
        uint64_t s = static_cast<uint64_t>(
            std::chrono::duration_cast<std::chrono::nanoseconds>(
                std::chrono::system_clock::now().time_since_epoch())
                .count());
        std::random_device rd;
        s ^= (static_cast<uint64_t>(rd()) << 32) ^ rd();
        return s;
    }();
    uint64_t state = boot ^ (counter.fetch_add(1) * 0x9e3779b97f4a7c15ULL);
    uint64_t a = splitmix64(state);
    uint64_t b = splitmix64(state);
    return std::string(prefix) + "-" + to_hex(a) + to_hex(b).substr(0, 8);
}

std::string lowercase_ascii(std::string_view s) {
    std::string out(s);
    for (char& c : out)
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    return out;
}

bool contains_ci(std::string_view haystack, std::string_view needle_lower) {
    if (needle_lower.empty()) return true;
    if (haystack.size() < needle_lower.size()) return false;
    return lowercase_ascii(haystack).find(needle_lower) != std::string::npos;
}

}  // namespace em

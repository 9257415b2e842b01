#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace em {

// FNV-1a. Stable across platforms/builds; used for feature hashing and
// deterministic ids, so std::hash is deliberately avoided.
inline uint64_t fnv1a64(std::string_view s, uint64_t seed = 1469598103934665603ULL) {
    uint64_t h = seed;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Deterministic RNG with explicit distribution code. std:: distributions are
// implementation-defined, which would break byte-identical generator output
// across toolchains.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed ? seed : 0x6d5f4a3c2b1e0d9fULL) {}

    uint64_t next_u64() { return splitmix64(state_); }

    // uniform in [0, 1)
    double next_double() { return (next_u64() >> 11) * (1.0 / 9007199254740992.0); }

    // uniform integer in [lo, hi] inclusive
    int64_t next_int(int64_t lo, int64_t hi) {
        if (hi <= lo) return lo;
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int64_t>(next_u64() % span);
    }

    bool next_bool(double p) { return next_double() < p; }

    // standard normal via Box-Muller
    double next_gauss() {
        double u1 = next_double();
        double u2 = next_double();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // index into a weight vector; weights need not be normalized
    size_t next_weighted(const std::vector<double>& weights) {
        double total = 0;
        for (double w : weights) total += w;
        double r = next_double() * total;
        double acc = 0;
        for (size_t i = 0; i < weights.size(); ++i) {
            acc += weights[i];
            if (r < acc) return i;
        }
        return weights.empty() ? 0 : weights.size() - 1;
    }

  private:
    uint64_t state_;
};

std::string to_hex(uint64_t v);
std::string base64_encode(const std::string& raw);
std::string base64_decode(const std::string& enc);

// Process-unique random id, e.g. "m-1f3a9c...". Not deterministic; callers
// that need replay-stable ids supply their own.
std::string random_id(const char* prefix);

std::string lowercase_ascii(std::string_view s);
bool contains_ci(std::string_view haystack, std::string_view needle_lower);

}  // namespace em

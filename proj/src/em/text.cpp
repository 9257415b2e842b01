#include "em/text.hpp"

#include <algorithm>
#include <map>

#include "em/common.hpp"

using nlohmann::json;

namespace em {

namespace {

bool is_unicode_space(uint32_t cp) {
    if (cp == 0x20 || (cp >= 0x09 && cp <= 0x0d)) return true;
    switch (cp) {
        case 0xa0:
        case 0x1680:
        case 0x2028:
        case 0x2029:
        case 0x202f:
        case 0x205f:
        case 0x3000:
            return true;
        default:
            return cp >= 0x2000 && cp <= 0x200a;
    }
}

bool is_edge_punct(uint32_t cp) {
    if (cp < 0x80) {
        char c = static_cast<char>(cp);
        static const std::string punct = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";
        return punct.find(c) != std::string::npos;
    }
    switch (cp) {
        case 0x2018:  // quotes and dashes that routinely wrap tweets
        case 0x2019:
        case 0x201c:
        case 0x201d:
        case 0x2013:
        case 0x2014:
        case 0x2026:
        case 0xab:
        case 0xbb:
            return true;
        default:
            return false;
    }
}

// Appends decoded codepoints as (cp, byte length) pairs; bad bytes pass
// through as single-byte points so no input can derail the tokenizer.
std::vector<std::pair<uint32_t, int>> decode_utf8(const std::string& s) {
    std::vector<std::pair<uint32_t, int>> out;
    size_t i = 0;
    while (i < s.size()) {
        unsigned char c = static_cast<unsigned char>(s[i]);
        uint32_t cp = c;
        int len = 1;
        if (c >= 0xf0 && i + 3 < s.size()) {
            cp = ((c & 0x07u) << 18) | ((s[i + 1] & 0x3fu) << 12) | ((s[i + 2] & 0x3fu) << 6) |
                 (s[i + 3] & 0x3fu);
            len = 4;
        } else if (c >= 0xe0 && i + 2 < s.size()) {
            cp = ((c & 0x0fu) << 12) | ((s[i + 1] & 0x3fu) << 6) | (s[i + 2] & 0x3fu);
            len = 3;
        } else if (c >= 0xc0 && i + 1 < s.size()) {
            cp = ((c & 0x1fu) << 6) | (s[i + 1] & 0x3fu);
            len = 2;
        }
        out.emplace_back(cp, len);
        i += static_cast<size_t>(len);
    }
    return out;
}

bool looks_like_url(const std::string& lower) {
    return lower.rfind("http://", 0) == 0 || lower.rfind("https://", 0) == 0 ||
           lower.rfind("www.", 0) == 0;
}

}  // namespace

std::vector<TokenSpan> tokenize_spans(const std::string& text) {
    std::vector<TokenSpan> tokens;
    auto cps = decode_utf8(text);

    size_t i = 0;
    size_t byte = 0;
    while (i < cps.size()) {
        while (i < cps.size() && is_unicode_space(cps[i].first)) {
            byte += static_cast<size_t>(cps[i].second);
            ++i;
        }
        size_t start_cp = i;
        size_t start_byte = byte;
        while (i < cps.size() && !is_unicode_space(cps[i].first)) {
            byte += static_cast<size_t>(cps[i].second);
            ++i;
        }
        if (i == start_cp) break;

        std::string raw = text.substr(start_byte, byte - start_byte);
        std::string lower = lowercase_ascii(raw);
        if (looks_like_url(lower) || (!raw.empty() && raw[0] == '@')) continue;

        // trim edge punctuation on the codepoint sequence; '#' only leads
        size_t lo = start_cp, hi = i;  // [lo, hi) in cps
        size_t lo_byte = start_byte, hi_byte = byte;
        if (cps[lo].first == '#') {
            lo_byte += static_cast<size_t>(cps[lo].second);
            ++lo;
        }
        while (lo < hi && is_edge_punct(cps[lo].first)) {
            lo_byte += static_cast<size_t>(cps[lo].second);
            ++lo;
        }
        while (hi > lo && is_edge_punct(cps[hi - 1].first)) {
            hi_byte -= static_cast<size_t>(cps[hi - 1].second);
            --hi;
        }
        if (lo >= hi) continue;
        TokenSpan span;
        span.raw = text.substr(lo_byte, hi_byte - lo_byte);
        span.lower = lowercase_ascii(span.raw);
        span.byte_pos = lo_byte;
        tokens.push_back(std::move(span));
    }
    return tokens;
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    for (auto& s : tokenize_spans(text)) tokens.push_back(std::move(s.lower));
    return tokens;
}

bool StopwordList::contains(const std::string& token) const {
    if (static_terms.count(token)) return true;
    for (const auto& [term, count] : dynamic_terms) {
        if (term == token) return true;
    }
    return false;
}

json StopwordList::to_json() const {
    json dyn = json::array();
    for (const auto& [term, count] : dynamic_terms) {
        dyn.push_back(json{{"term", term}, {"count", count}});
    }
    return json{{"version", version},
                {"static", std::vector<std::string>(static_terms.begin(), static_terms.end())},
                {"dynamic", dyn},
                {"updated_at", updated_at_ms}};
}

StopwordList StopwordList::from_json(const json& j) {
    StopwordList l;
    l.version = j.value("version", int64_t{0});
    for (const auto& t : j.value("static", std::vector<std::string>{})) l.static_terms.insert(t);
    if (j.contains("dynamic")) {
        for (const auto& d : j.at("dynamic")) {
            l.dynamic_terms.emplace_back(d.at("term").get<std::string>(),
                                         d.value("count", int64_t{0}));
        }
    }
    l.updated_at_ms = j.value("updated_at", int64_t{0});
    return l;
}

void StopwordList::save(const fs::path& path) const { atomic_write(path, to_json().dump()); }

StopwordList StopwordList::load(const fs::path& path) {
    auto content = read_file(path);
    if (!content) return StopwordList{};
    return from_json(json::parse(*content));
}

FilterDecision filter_stopwords(const std::vector<std::string>& tokens, const StopwordList& list) {
    for (const auto& t : tokens) {
        if (list.contains(t)) return FilterDecision{true, t};
    }
    return FilterDecision{};
}

StopwordList refresh_stopwords(const StopwordList& prior,
                               const std::vector<std::vector<std::string>>& window,
                               const std::vector<std::string>& stream_keywords,
                               const StopwordConfig& cfg, int64_t now_ms) {
    if (window.empty()) return prior;

    std::map<std::string, int64_t> counts;
    for (const auto& tokens : window) {
        for (const auto& t : tokens) counts[t] += 1;
    }

    auto keyword_tainted = [&](const std::string& term) {
        for (const auto& kw : stream_keywords) {
            if (term.find(kw) != std::string::npos) return true;
        }
        return false;
    };

    std::vector<std::pair<std::string, int64_t>> candidates;
    for (const auto& [term, count] : counts) {
        if (term.size() < cfg.min_token_len) continue;
        if (prior.static_terms.count(term)) continue;
        if (keyword_tainted(term)) continue;
        candidates.emplace_back(term, count);
    }
    std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (candidates.size() > cfg.k_stop) candidates.resize(cfg.k_stop);

    StopwordList next;
    next.static_terms = prior.static_terms;
    next.dynamic_terms = std::move(candidates);  // full replacement of the prior list
    next.version = prior.version + 1;
    next.updated_at_ms = now_ms;
    return next;
}

std::vector<std::string> make_negative_sample(const std::vector<std::string>& tokens,
                                              const std::string& trigger_term) {
    std::vector<std::string> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) {
        if (t != trigger_term) out.push_back(t);
    }
    return out;
}

}  // namespace em

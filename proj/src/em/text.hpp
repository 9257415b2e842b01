#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "em/fsutil.hpp"

namespace em {

struct TokenSpan {
    std::string lower;
    std::string raw;  // original form, edge punctuation stripped
    size_t byte_pos = 0;
};

// Lowercases, splits on Unicode whitespace, strips edge punctuation, drops
// URLs and @-mentions, keeps the bare word of #hashtags.
std::vector<std::string> tokenize(const std::string& text);
std::vector<TokenSpan> tokenize_spans(const std::string& text);

// Bootstrap terms plus a bounded dynamic list refreshed from recently
// classified irrelevant posts. Immutable snapshot; refresh returns a new one.
struct StopwordList {
    std::set<std::string> static_terms;
    std::vector<std::pair<std::string, int64_t>> dynamic_terms;  // term, window count
    int64_t version = 0;
    int64_t updated_at_ms = 0;

    bool contains(const std::string& token) const;

    nlohmann::json to_json() const;
    static StopwordList from_json(const nlohmann::json& j);
    void save(const fs::path& path) const;
    static StopwordList load(const fs::path& path);
};

struct FilterDecision {
    bool filtered = false;
    std::string term;  // the triggering term when filtered
};

// Filtered iff any token is a stopword; reports the earliest trigger.
FilterDecision filter_stopwords(const std::vector<std::string>& tokens, const StopwordList& list);

struct StopwordConfig {
    size_t k_stop = 5;
    size_t min_token_len = 3;
    size_t window_posts = 5000;
    double window_hours = 24;
    size_t refresh_every = 1000;
};

// Replaces the dynamic list with the top-k most frequent window terms,
// never admitting stream keywords (any token containing one as a substring
// would blind the matching rule), static terms, or short tokens. Ties at
// the cut rank break lexicographically. An empty window is a no-op.
StopwordList refresh_stopwords(const StopwordList& prior,
                               const std::vector<std::vector<std::string>>& window,
                               const std::vector<std::string>& stream_keywords,
                               const StopwordConfig& cfg, int64_t now_ms);

// Negative-sample synthesis: the trigger term is removed everywhere, order
// otherwise preserved. Empty results are not usable as samples.
std::vector<std::string> make_negative_sample(const std::vector<std::string>& tokens,
                                              const std::string& trigger_term);

}  // namespace em

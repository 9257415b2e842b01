#pragma once

#include <list>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "em/fsutil.hpp"
#include "em/text.hpp"
#include "em/types.hpp"

namespace em {

enum class ExtractorKind { kGeotag, kSubstring, kTrainedTagger, kOffshelfTagger };

const char* extractor_name(ExtractorKind kind);

struct LocationGuess {
    std::string name;
    double lat = 0;
    double lon = 0;
    ExtractorKind extractor = ExtractorKind::kSubstring;
    double score = 0;
    size_t text_pos = 0;  // byte position of the evidence in the post text
};

// Substring-match list grown from corroborative events, LRU-bounded.
// Names are normalized (trimmed, collapsed whitespace, lowercase); a name
// with a comma prefix also registers its prefix as an alias.
class Gazetteer {
  public:
    explicit Gazetteer(size_t capacity = 100000);

    struct Entry {
        double lat = 0;
        double lon = 0;
        int64_t first_seen_ms = 0;
        std::string source_event_id;
    };

    // Inserts the event's location; events with no name fall back to the
    // nearest known entry (reverse lookup); otherwise counted as skipped.
    bool update(const CorroborativeEvent& event, int64_t now_ms);

    bool insert(const std::string& name, double lat, double lon, int64_t now_ms,
                const std::string& source_event_id);

    std::optional<Entry> lookup(const std::string& name) const;

    // Names in no particular order, for scanning.
    std::vector<std::string> names() const;

    size_t size() const { return entries_.size(); }
    int64_t skipped() const { return skipped_; }

    // name,lat,lon per line; '#' comments allowed
    void load_seed_csv(const fs::path& csv, int64_t now_ms);

    nlohmann::json to_json() const;
    static Gazetteer from_json(const nlohmann::json& j);

    static std::string normalize(const std::string& name);

  private:
    size_t capacity_;
    int64_t skipped_ = 0;
    // LRU: most recently used at the front
    mutable std::list<std::string> order_;
    mutable std::unordered_map<std::string, std::pair<Entry, std::list<std::string>::iterator>>
        entries_;

    void touch(const std::string& name) const;
    std::optional<std::string> reverse_lookup(double lat, double lon) const;
};

// Longest-match-first scan of the lowercased text against gazetteer names;
// overlapping shorter matches are suppressed. Score 0.9.
std::vector<LocationGuess> extract_substring(const std::string& text, const Gazetteer& gazetteer);

// Continuously trained sequence tagger: averaged perceptron over window
// features (token identity, capitalization in the raw text, neighbors,
// position). Deterministic for fixed update history.
class TaggerModel {
  public:
    TaggerModel() = default;

    // One update pass with tokens[span_begin, span_end) labeled LOC.
    void train_increment(const std::vector<TokenSpan>& tokens, size_t span_begin, size_t span_end);

    // Contiguous predicted LOC spans as (begin, end) token ranges. Empty
    // until trained_on_count reaches the warmup threshold.
    std::vector<std::pair<size_t, size_t>> predict_spans(const std::vector<TokenSpan>& tokens,
                                                         int64_t warmup) const;

    int64_t trained_on_count() const { return trained_on_count_; }
    int64_t version() const { return version_; }

    nlohmann::json to_json() const;
    static TaggerModel from_json(const nlohmann::json& j);

  private:
    std::unordered_map<std::string, double> weights_;
    std::unordered_map<std::string, double> accum_;  // for averaging
    int64_t steps_ = 0;
    int64_t trained_on_count_ = 0;
    int64_t version_ = 0;

    static std::vector<std::string> features(const std::vector<TokenSpan>& tokens, size_t i);
    double averaged_score(const std::vector<std::string>& feats) const;
};

// Tagger predictions resolved against the gazetteer; unresolved spans are
// dropped. Score 0.7.
std::vector<LocationGuess> tagger_predict(const std::string& text, const TaggerModel& model,
                                          const Gazetteer& gazetteer, int64_t warmup);

// Off-the-shelf NER adapter; the default implementation extracts nothing.
class OffshelfTagger {
  public:
    virtual ~OffshelfTagger() = default;
    virtual std::vector<LocationGuess> extract(const Post& post) const { return {}; }
};

// Winning guess: geotag > substring > trained tagger > off-the-shelf;
// ties within a class break by score, then earliest text position.
std::optional<LocationGuess> fuse(std::vector<LocationGuess> guesses, const Post& post);

}  // namespace em

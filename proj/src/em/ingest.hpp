#pragma once

#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "em/fsutil.hpp"
#include "em/geo.hpp"
#include "em/grid.hpp"
#include "em/types.hpp"

namespace em {

// Case-insensitive substring match; returns the first keyword (in list
// order) contained in the text.
std::optional<std::string> match_keyword(const std::string& text,
                                         const std::vector<std::string>& keywords);

// Streaming JSONL corpus reader for replay. Malformed lines and lines
// without a parsable timestamp are skipped and counted.
class CorpusReader {
  public:
    explicit CorpusReader(const fs::path& path);

    // posts with created_at <= up_to_ms, at most max of them, in file order
    std::vector<Post> read_until(int64_t up_to_ms, size_t max);
    std::optional<int64_t> peek_timestamp();
    bool exhausted();

    int64_t skipped_malformed() const { return skipped_malformed_; }
    int64_t skipped_no_timestamp() const { return skipped_no_timestamp_; }
    int64_t read_count() const { return read_count_; }

  private:
    std::ifstream in_;
    fs::path path_;
    std::optional<Post> pending_;
    bool eof_ = false;
    int64_t skipped_malformed_ = 0;
    int64_t skipped_no_timestamp_ = 0;
    int64_t read_count_ = 0;

    void advance();
};

Post parse_corpus_post(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Corroborative sources. Live services sit behind this interface; the
// artifact ships file-backed fixtures only.

class Fetcher {
  public:
    virtual ~Fetcher() = default;
    // raw records newer than `since_ms` by row timestamp; idempotent for a
    // fixed since
    virtual std::vector<nlohmann::json> fetch(int64_t since_ms) = 0;
};

class FileFetcher final : public Fetcher {
  public:
    FileFetcher(fs::path path, std::string ts_field);
    std::vector<nlohmann::json> fetch(int64_t since_ms) override;
    int64_t skipped() const { return skipped_; }

  private:
    fs::path path_;
    std::string ts_field_;
    int64_t skipped_ = 0;
};

struct ParsedRow {
    CorroborativeEvent event;
    int64_t row_ts = 0;  // watermark timestamp (observation/publication time)
};

// One parser per source kind; rows that do not describe an event (bad
// fields, "no flooding" gauges) come back empty and are counted.
class SourceParser {
  public:
    virtual ~SourceParser() = default;
    virtual std::optional<ParsedRow> parse(const nlohmann::json& row) = 0;
    int64_t skipped = 0;
};

// kinds: trmm | usgs_eq | ghcnd | flood_gauge | firms_modis | firms_viirs
std::unique_ptr<SourceParser> make_source_parser(const std::string& kind);

// which row field carries the watermark timestamp for a kind
std::string source_ts_field(const std::string& kind);

// News rows carry long-form text; the location comes from the geo stack and
// occurred_at is backdated by the corroboration lag.
class NewsParser final : public SourceParser {
  public:
    using Resolver = std::function<std::optional<LocationGuess>(const std::string& text)>;
    NewsParser(std::string event_type, int64_t lag_ms, Resolver resolver);
    std::optional<ParsedRow> parse(const nlohmann::json& row) override;

  private:
    std::string event_type_;
    int64_t lag_ms_;
    Resolver resolver_;
};

// ---------------------------------------------------------------------------
// Secondary ground truth: heavy rainfall plus an earthquake in the same
// grid cell derives a landslide event at the quake's coordinates.

class QuakeRainCombiner {
  public:
    QuakeRainCombiner(GridParams grid, double min_quake_magnitude = 4.0,
                      double min_rain_mm_per_day = 50.0)
        : quakes_(grid), rains_(grid), min_quake_(min_quake_magnitude),
          min_rain_(min_rain_mm_per_day) {}

    // feed any corroborative event; returns derived landslide events
    std::vector<CorroborativeEvent> feed(const CorroborativeEvent& event);

    nlohmann::json to_json() const;
    static QuakeRainCombiner from_json(const nlohmann::json& j);

  private:
    GridIndex quakes_;
    GridIndex rains_;
    double min_quake_;
    double min_rain_;
    std::set<std::string> emitted_;

    CorroborativeEvent derive(const CorroborativeEvent& quake,
                              const CorroborativeEvent& rain) const;
};

}  // namespace em

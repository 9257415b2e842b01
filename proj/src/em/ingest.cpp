#include "em/ingest.hpp"

#include <fstream>

#include "em/common.hpp"
#include "em/logging.hpp"
#include "em/timeutil.hpp"

using nlohmann::json;

namespace em {

std::optional<std::string> match_keyword(const std::string& text,
                                         const std::vector<std::string>& keywords) {
    std::string lower = lowercase_ascii(text);
    for (const auto& kw : keywords) {
        if (lower.find(kw) != std::string::npos) return kw;
    }
    return std::nullopt;
}

Post parse_corpus_post(const json& j) {
    Post p;
    p.id = j.at("id").get<std::string>();
    p.text = j.at("text").get<std::string>();
    if (p.text.empty()) throw std::invalid_argument("empty text");
    std::string raw_ts;
    if (j.at("created_at").is_string()) {
        raw_ts = j.at("created_at").get<std::string>();
    } else {
        raw_ts = j.at("created_at").dump();
    }
    auto ts = parse_timestamp(raw_ts);
    if (!ts) throw std::out_of_range("timestamp");
    p.created_at_ms = *ts;
    if (j.contains("lat") && j.contains("lon") && !j.at("lat").is_null()) {
        double lat = j.at("lat").get<double>();
        double lon = j.at("lon").get<double>();
        if (valid_lat_lon(lat, lon)) p.geotag = GeoPoint{lat, lon};
    }
    p.source = j.value("source", "synthetic");
    return p;
}

CorpusReader::CorpusReader(const fs::path& path) : in_(path), path_(path) {
    if (!in_) throw std::runtime_error("corpus not readable: " + path.string());
}

void CorpusReader::advance() {
    std::string line;
    while (!pending_ && std::getline(in_, line)) {
        if (line.empty()) continue;
        try {
            json j = json::parse(line);
            if (!j.contains("created_at") || j.at("created_at").is_null()) {
                ++skipped_no_timestamp_;
                continue;
            }
            pending_ = parse_corpus_post(j);
        } catch (const std::out_of_range&) {
            ++skipped_no_timestamp_;
        } catch (const std::exception&) {
            ++skipped_malformed_;
        }
    }
    if (!pending_) eof_ = true;
}

std::optional<int64_t> CorpusReader::peek_timestamp() {
    if (!pending_) advance();
    if (!pending_) return std::nullopt;
    return pending_->created_at_ms;
}

bool CorpusReader::exhausted() {
    if (!pending_) advance();
    return eof_ && !pending_;
}

std::vector<Post> CorpusReader::read_until(int64_t up_to_ms, size_t max) {
    std::vector<Post> out;
    while (out.size() < max) {
        if (!pending_) advance();
        if (!pending_) break;
        if (pending_->created_at_ms > up_to_ms) break;
        out.push_back(std::move(*pending_));
        pending_.reset();
        ++read_count_;
    }
    return out;
}

// ---------------------------------------------------------------------------

FileFetcher::FileFetcher(fs::path path, std::string ts_field)
    : path_(std::move(path)), ts_field_(std::move(ts_field)) {}

std::vector<json> FileFetcher::fetch(int64_t since_ms) {
    std::vector<json> out;
    std::ifstream in(path_);
    if (!in) throw std::runtime_error("fixture not readable: " + path_.string());
    std::string line;
    skipped_ = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json row;
        try {
            row = json::parse(line);
        } catch (const std::exception&) {
            ++skipped_;
            continue;
        }
        if (!row.contains(ts_field_)) {
            ++skipped_;
            continue;
        }
        auto ts = row.at(ts_field_).is_string()
                      ? parse_timestamp(row.at(ts_field_).get<std::string>())
                      : parse_timestamp(row.at(ts_field_).dump());
        if (!ts) {
            ++skipped_;
            continue;
        }
        if (*ts > since_ms) out.push_back(std::move(row));
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

std::optional<int64_t> row_ts(const json& row, const char* field) {
    if (!row.contains(field)) return std::nullopt;
    if (row.at(field).is_string()) return parse_timestamp(row.at(field).get<std::string>());
    return parse_timestamp(row.at(field).dump());
}

std::optional<std::pair<double, double>> row_lat_lon(const json& row) {
    if (!row.contains("lat") || !row.contains("lon")) return std::nullopt;
    try {
        double lat = row.at("lat").get<double>();
        double lon = row.at("lon").get<double>();
        if (!valid_lat_lon(lat, lon)) return std::nullopt;
        return std::make_pair(lat, lon);
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

// NASA TRMM-like landslide nowcasts: any non-empty likelihood is an event.
struct TrmmParser final : SourceParser {
    std::optional<ParsedRow> parse(const json& row) override {
        auto ts = row_ts(row, "date");
        auto ll = row_lat_lon(row);
        std::string nowcast = row.value("nowcast", "");
        if (!ts || !ll || nowcast.empty() || !row.contains("id")) {
            ++skipped;
            return std::nullopt;
        }
        ParsedRow out;
        out.row_ts = *ts;
        out.event.id = "trmm:" + row.at("id").get<std::string>();
        out.event.event_type = "landslide";
        out.event.source_name = "trmm";
        out.event.lat = ll->first;
        out.event.lon = ll->second;
        out.event.occurred_at_ms = *ts;
        out.event.location_name = row.value("location", "");
        out.event.confidence = "primary_ground_truth";
        return out;
    }
};

struct UsgsEqParser final : SourceParser {
    std::optional<ParsedRow> parse(const json& row) override {
        auto ts = row_ts(row, "time");
        auto ll = row_lat_lon(row);
        if (!ts || !ll || !row.contains("magnitude") || !row.contains("id")) {
            ++skipped;
            return std::nullopt;
        }
        ParsedRow out;
        out.row_ts = *ts;
        out.event.id = "usgs_eq:" + row.at("id").get<std::string>();
        out.event.event_type = "earthquake";
        out.event.source_name = "usgs_eq";
        out.event.lat = ll->first;
        out.event.lon = ll->second;
        out.event.occurred_at_ms = *ts;
        out.event.magnitude = row.at("magnitude").get<double>();
        out.event.magnitude_unit = "Mw";
        out.event.location_name = row.value("place", "");
        out.event.confidence = "primary_ground_truth";
        return out;
    }
};

struct GhcndParser final : SourceParser {
    std::optional<ParsedRow> parse(const json& row) override {
        auto ts = row_ts(row, "date");
        auto ll = row_lat_lon(row);
        if (!ts || !ll || !row.contains("precip_mm") || !row.contains("id")) {
            ++skipped;
            return std::nullopt;
        }
        ParsedRow out;
        out.row_ts = *ts;
        out.event.id = "ghcnd:" + row.at("id").get<std::string>();
        out.event.event_type = "rainfall";
        out.event.source_name = "ghcnd";
        out.event.lat = ll->first;
        out.event.lon = ll->second;
        out.event.occurred_at_ms = *ts;
        out.event.magnitude = row.at("precip_mm").get<double>();
        out.event.magnitude_unit = "mm/day";
        out.event.location_name = row.value("station", "");
        out.event.confidence = "primary_ground_truth";
        return out;
    }
};

// USGS flood gauges: major/moderate/minor map to events; "no flooding" rows
// are not events (and are not counted as skips).
struct FloodGaugeParser final : SourceParser {
    std::optional<ParsedRow> parse(const json& row) override {
        auto ts = row_ts(row, "time");
        auto ll = row_lat_lon(row);
        std::string status = lowercase_ascii(row.value("status", ""));
        if (!ts || !ll || status.empty() || !row.contains("id")) {
            ++skipped;
            return std::nullopt;
        }
        if (status != "major" && status != "moderate" && status != "minor") {
            return std::nullopt;  // quiet gauge
        }
        ParsedRow out;
        out.row_ts = *ts;
        out.event.id = "flood_gauge:" + row.at("id").get<std::string>();
        out.event.event_type = "flood";
        out.event.source_name = "flood_gauge";
        out.event.lat = ll->first;
        out.event.lon = ll->second;
        out.event.occurred_at_ms = *ts;
        out.event.location_name = row.value("gauge", "");
        out.event.magnitude = status == "major" ? 3.0 : (status == "moderate" ? 2.0 : 1.0);
        out.event.magnitude_unit = "severity";
        out.event.confidence = "primary_ground_truth";
        return out;
    }
};

struct FirmsParser final : SourceParser {
    std::string source;
    explicit FirmsParser(std::string s) : source(std::move(s)) {}
    std::optional<ParsedRow> parse(const json& row) override {
        auto ts = row_ts(row, "acq_date");
        auto ll = row_lat_lon(row);
        if (!ts || !ll || !row.contains("id")) {
            ++skipped;
            return std::nullopt;
        }
        ParsedRow out;
        out.row_ts = *ts;
        out.event.id = source + ":" + row.at("id").get<std::string>();
        out.event.event_type = "wildfire";
        out.event.source_name = source;
        out.event.lat = ll->first;
        out.event.lon = ll->second;
        out.event.occurred_at_ms = *ts;
        if (row.contains("frp")) {
            out.event.magnitude = row.at("frp").get<double>();
            out.event.magnitude_unit = "MW";
        }
        out.event.confidence = "primary_ground_truth";
        return out;
    }
};

}  // namespace

std::string source_ts_field(const std::string& kind) {
    if (kind == "trmm" || kind == "ghcnd") return "date";
    if (kind == "usgs_eq" || kind == "flood_gauge") return "time";
    if (kind == "firms_modis" || kind == "firms_viirs") return "acq_date";
    if (kind == "news") return "published_at";
    throw std::invalid_argument("unknown corroborative source kind: " + kind);
}

std::unique_ptr<SourceParser> make_source_parser(const std::string& kind) {
    if (kind == "trmm") return std::make_unique<TrmmParser>();
    if (kind == "usgs_eq") return std::make_unique<UsgsEqParser>();
    if (kind == "ghcnd") return std::make_unique<GhcndParser>();
    if (kind == "flood_gauge") return std::make_unique<FloodGaugeParser>();
    if (kind == "firms_modis") return std::make_unique<FirmsParser>("firms_modis");
    if (kind == "firms_viirs") return std::make_unique<FirmsParser>("firms_viirs");
    throw std::invalid_argument("unknown corroborative source kind: " + kind);
}

NewsParser::NewsParser(std::string event_type, int64_t lag_ms, Resolver resolver)
    : event_type_(std::move(event_type)), lag_ms_(lag_ms), resolver_(std::move(resolver)) {}

std::optional<ParsedRow> NewsParser::parse(const json& row) {
    auto ts = row_ts(row, "published_at");
    if (!ts || !row.contains("id")) {
        ++skipped;
        return std::nullopt;
    }
    std::string text = row.value("title", "");
    if (row.contains("body")) text += " " + row.value("body", "");
    auto loc = resolver_(text);
    if (!loc) {
        ++skipped;  // no extractable location: article dropped and counted
        return std::nullopt;
    }
    ParsedRow out;
    out.row_ts = *ts;
    out.event.id = "news:" + row.at("id").get<std::string>();
    out.event.event_type = row.value("tag", event_type_);
    out.event.source_name = "news";
    out.event.lat = loc->lat;
    out.event.lon = loc->lon;
    out.event.occurred_at_ms = *ts - lag_ms_;
    out.event.location_name = loc->name;
    out.event.confidence = "late_corroboration";
    return out;
}

// ---------------------------------------------------------------------------

std::vector<CorroborativeEvent> QuakeRainCombiner::feed(const CorroborativeEvent& event) {
    std::vector<CorroborativeEvent> derived;
    // the rule fires on an exact GridKey match: same cell, same bucket
    if (event.event_type == "earthquake") {
        if (!event.magnitude || *event.magnitude < min_quake_) return derived;
        quakes_.index_event(event);
        GridKey key = to_grid(event.lat, event.lon, event.occurred_at_ms, quakes_.params());
        rains_.observe_bucket(key.time_bucket);
        for (const auto& rain : rains_.find_all_exact("rainfall", key)) {
            auto d = derive(event, rain);
            if (emitted_.insert(d.id).second) derived.push_back(std::move(d));
        }
    } else if (event.event_type == "rainfall") {
        if (!event.magnitude || *event.magnitude < min_rain_) return derived;
        rains_.index_event(event);
        GridKey key = to_grid(event.lat, event.lon, event.occurred_at_ms, rains_.params());
        quakes_.observe_bucket(key.time_bucket);
        for (const auto& quake : quakes_.find_all_exact("earthquake", key)) {
            auto d = derive(quake, event);
            if (emitted_.insert(d.id).second) derived.push_back(std::move(d));
        }
    }
    return derived;
}

CorroborativeEvent QuakeRainCombiner::derive(const CorroborativeEvent& quake,
                                             const CorroborativeEvent& rain) const {
    CorroborativeEvent d;
    d.id = "derived:" + quake.id + "+" + rain.id;
    d.event_type = "landslide";
    d.source_name = "usgs_eq+ghcnd";
    d.lat = quake.lat;  // the quake's coordinates
    d.lon = quake.lon;
    d.occurred_at_ms = std::max(quake.occurred_at_ms, rain.occurred_at_ms);
    d.location_name = !quake.location_name.empty() ? quake.location_name : rain.location_name;
    d.confidence = "secondary_ground_truth";
    return d;
}

json QuakeRainCombiner::to_json() const {
    json emitted = json::array();
    for (const auto& id : emitted_) emitted.push_back(id);
    return json{{"quakes", quakes_.to_json()},
                {"rains", rains_.to_json()},
                {"min_quake", min_quake_},
                {"min_rain", min_rain_},
                {"emitted", emitted}};
}

QuakeRainCombiner QuakeRainCombiner::from_json(const json& j) {
    GridIndex quakes = GridIndex::from_json(j.at("quakes"));
    QuakeRainCombiner c(quakes.params(), j.value("min_quake", 4.0), j.value("min_rain", 50.0));
    c.quakes_ = std::move(quakes);
    c.rains_ = GridIndex::from_json(j.at("rains"));
    for (const auto& id : j.value("emitted", std::vector<std::string>{})) c.emitted_.insert(id);
    return c;
}

}  // namespace em

#include "em/geo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "em/common.hpp"
#include "em/logging.hpp"

using nlohmann::json;

namespace em {

const char* extractor_name(ExtractorKind kind) {
    switch (kind) {
        case ExtractorKind::kGeotag: return "geotag";
        case ExtractorKind::kSubstring: return "substring";
        case ExtractorKind::kTrainedTagger: return "trained_tagger";
        case ExtractorKind::kOffshelfTagger: return "offshelf_tagger";
    }
    return "unknown";
}

Gazetteer::Gazetteer(size_t capacity) : capacity_(capacity ? capacity : 1) {}

std::string Gazetteer::normalize(const std::string& name) {
    std::string lower = lowercase_ascii(name);
    std::string out;
    out.reserve(lower.size());
    bool in_space = true;  // swallows leading whitespace
    for (char c : lower) {
        bool ws = c == ' ' || c == '\t' || c == '\n' || c == '\r';
        if (ws) {
            if (!in_space) out.push_back(' ');
            in_space = true;
        } else {
            out.push_back(c);
            in_space = false;
        }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

void Gazetteer::touch(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) return;
    order_.erase(it->second.second);
    order_.push_front(name);
    it->second.second = order_.begin();
}

bool Gazetteer::insert(const std::string& raw_name, double lat, double lon, int64_t now_ms,
                       const std::string& source_event_id) {
    std::string name = normalize(raw_name);
    if (name.empty() || !valid_lat_lon(lat, lon)) return false;

    auto add_one = [&](const std::string& n) {
        auto it = entries_.find(n);
        if (it != entries_.end()) {
            // refresh: keep the most recently corroborated coordinates
            it->second.first.lat = lat;
            it->second.first.lon = lon;
            it->second.first.source_event_id = source_event_id;
            touch(n);
            return;
        }
        order_.push_front(n);
        entries_[n] = {Entry{lat, lon, now_ms, source_event_id}, order_.begin()};
        while (entries_.size() > capacity_) {
            entries_.erase(order_.back());
            order_.pop_back();
        }
    };

    add_one(name);
    // "seattle, wa" also answers to "seattle" and to the comma-less form
    // (tokenized text loses the comma)
    auto comma = name.find(',');
    if (comma != std::string::npos) {
        std::string alias = normalize(name.substr(0, comma));
        if (!alias.empty()) add_one(alias);
        std::string commaless = name;
        commaless.erase(std::remove(commaless.begin(), commaless.end(), ','), commaless.end());
        commaless = normalize(commaless);
        if (!commaless.empty()) add_one(commaless);
    }
    return true;
}

bool Gazetteer::update(const CorroborativeEvent& event, int64_t now_ms) {
    if (!event.location_name.empty()) {
        if (insert(event.location_name, event.lat, event.lon, now_ms, event.id)) return true;
    }
    if (valid_lat_lon(event.lat, event.lon)) {
        if (auto name = reverse_lookup(event.lat, event.lon)) {
            insert(*name, event.lat, event.lon, now_ms, event.id);
            return true;
        }
    }
    ++skipped_;
    return false;
}

std::optional<std::string> Gazetteer::reverse_lookup(double lat, double lon) const {
    // nearest entry within a ~0.25 degree box
    constexpr double kBox = 0.25;
    double best = kBox * kBox * 2;
    std::optional<std::string> best_name;
    for (const auto& [name, value] : entries_) {
        double dlat = value.first.lat - lat;
        double dlon = value.first.lon - lon;
        if (std::abs(dlat) > kBox || std::abs(dlon) > kBox) continue;
        double d2 = dlat * dlat + dlon * dlon;
        if (d2 < best) {
            best = d2;
            best_name = name;
        }
    }
    return best_name;
}

std::optional<Gazetteer::Entry> Gazetteer::lookup(const std::string& name) const {
    auto it = entries_.find(normalize(name));
    if (it == entries_.end()) return std::nullopt;
    touch(it->first);
    return it->second.first;
}

std::vector<std::string> Gazetteer::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, value] : entries_) out.push_back(name);
    return out;
}

void Gazetteer::load_seed_csv(const fs::path& csv, int64_t now_ms) {
    std::ifstream in(csv);
    if (!in) throw std::runtime_error("seed gazetteer not readable: " + csv.string());
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        // name,lat,lon — names may not contain commas; "City, ST" forms use
        // a separate alias entry in the file instead
        auto c1 = line.rfind(',');
        if (c1 == std::string::npos || c1 == 0) continue;
        auto c2 = line.rfind(',', c1 - 1);
        if (c2 == std::string::npos) continue;
        std::string name = line.substr(0, c2);
        try {
            double lat = std::stod(line.substr(c2 + 1, c1 - c2 - 1));
            double lon = std::stod(line.substr(c1 + 1));
            insert(name, lat, lon, now_ms, "seed");
        } catch (const std::exception&) {
            continue;
        }
    }
}

json Gazetteer::to_json() const {
    json entries = json::array();
    // dump in LRU order, most recent first, so reload preserves eviction order
    for (auto it = order_.begin(); it != order_.end(); ++it) {
        const auto& e = entries_.at(*it);
        entries.push_back(json{{"name", *it},
                               {"lat", e.first.lat},
                               {"lon", e.first.lon},
                               {"first_seen", e.first.first_seen_ms},
                               {"source_event_id", e.first.source_event_id}});
    }
    return json{{"capacity", capacity_}, {"skipped", skipped_}, {"entries", entries}};
}

Gazetteer Gazetteer::from_json(const json& j) {
    Gazetteer g(j.value("capacity", size_t{100000}));
    g.skipped_ = j.value("skipped", int64_t{0});
    const auto& entries = j.at("entries");
    // reverse so that the most recently used ends up at the front again
    for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
        g.insert((*it).at("name").get<std::string>(), (*it).at("lat").get<double>(),
                 (*it).at("lon").get<double>(), (*it).value("first_seen", int64_t{0}),
                 (*it).value("source_event_id", ""));
    }
    return g;
}

std::vector<LocationGuess> extract_substring(const std::string& text, const Gazetteer& gazetteer) {
    std::string lower = lowercase_ascii(text);

    struct Hit {
        size_t pos;
        size_t len;
        std::string name;
    };
    std::vector<Hit> hits;
    for (const auto& name : gazetteer.names()) {
        if (name.size() < 3) continue;  // single letters and the like match everywhere
        size_t from = 0;
        while (true) {
            size_t pos = lower.find(name, from);
            if (pos == std::string::npos) break;
            hits.push_back(Hit{pos, name.size(), name});
            from = pos + 1;
        }
    }
    // longest matches claim their span first
    std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
        if (a.len != b.len) return a.len > b.len;
        if (a.pos != b.pos) return a.pos < b.pos;
        return a.name < b.name;
    });

    std::vector<std::pair<size_t, size_t>> taken;
    std::vector<LocationGuess> out;
    for (const auto& h : hits) {
        bool overlaps = false;
        for (const auto& [b, e] : taken) {
            if (h.pos < e && b < h.pos + h.len) {
                overlaps = true;
                break;
            }
        }
        if (overlaps) continue;
        taken.emplace_back(h.pos, h.pos + h.len);
        auto entry = gazetteer.lookup(h.name);
        if (!entry) continue;
        LocationGuess g;
        g.name = h.name;
        g.lat = entry->lat;
        g.lon = entry->lon;
        g.extractor = ExtractorKind::kSubstring;
        g.score = 0.9;
        g.text_pos = h.pos;
        out.push_back(std::move(g));
    }
    std::sort(out.begin(), out.end(),
              [](const LocationGuess& a, const LocationGuess& b) { return a.text_pos < b.text_pos; });
    return out;
}

// ---------------------------------------------------------------------------
// TaggerModel

std::vector<std::string> TaggerModel::features(const std::vector<TokenSpan>& tokens, size_t i) {
    std::vector<std::string> f;
    f.reserve(8);
    const TokenSpan& t = tokens[i];
    f.push_back("w=" + t.lower);
    bool cap = !t.raw.empty() && t.raw[0] >= 'A' && t.raw[0] <= 'Z';
    f.push_back(cap ? "cap=1" : "cap=0");
    f.push_back("prev=" + (i > 0 ? tokens[i - 1].lower : std::string("^")));
    f.push_back("next=" + (i + 1 < tokens.size() ? tokens[i + 1].lower : std::string("$")));
    if (i == 0) f.push_back("pos=first");
    if (i + 1 == tokens.size()) f.push_back("pos=last");
    if (cap && i > 0) f.push_back("cap_mid=1");
    return f;
}

double TaggerModel::averaged_score(const std::vector<std::string>& feats) const {
    // averaged perceptron: weight minus accumulated drift over steps
    double s = 0;
    for (const auto& f : feats) {
        auto w = weights_.find(f);
        if (w == weights_.end()) continue;
        double avg = w->second;
        if (steps_ > 0) {
            auto a = accum_.find(f);
            if (a != accum_.end()) avg -= a->second / static_cast<double>(steps_);
        }
        s += avg;
    }
    return s;
}

void TaggerModel::train_increment(const std::vector<TokenSpan>& tokens, size_t span_begin,
                                  size_t span_end) {
    for (size_t i = 0; i < tokens.size(); ++i) {
        ++steps_;
        bool gold = i >= span_begin && i < span_end;
        auto feats = features(tokens, i);
        double raw = 0;
        for (const auto& f : feats) {
            auto w = weights_.find(f);
            if (w != weights_.end()) raw += w->second;
        }
        bool pred = raw > 0;
        if (pred == gold) continue;
        double delta = gold ? 1.0 : -1.0;
        for (const auto& f : feats) {
            weights_[f] += delta;
            accum_[f] += delta * static_cast<double>(steps_);
        }
    }
    ++trained_on_count_;
    ++version_;
}

std::vector<std::pair<size_t, size_t>> TaggerModel::predict_spans(
    const std::vector<TokenSpan>& tokens, int64_t warmup) const {
    std::vector<std::pair<size_t, size_t>> spans;
    if (trained_on_count_ < warmup) return spans;
    size_t begin = 0;
    bool open = false;
    for (size_t i = 0; i < tokens.size(); ++i) {
        bool loc = averaged_score(features(tokens, i)) > 0;
        if (loc && !open) {
            begin = i;
            open = true;
        } else if (!loc && open) {
            spans.emplace_back(begin, i);
            open = false;
        }
    }
    if (open) spans.emplace_back(begin, tokens.size());
    return spans;
}

json TaggerModel::to_json() const {
    json w = json::object();
    json a = json::object();
    std::vector<std::string> keys;
    keys.reserve(weights_.size());
    for (const auto& [k, v] : weights_) keys.push_back(k);
    std::sort(keys.begin(), keys.end());
    for (const auto& k : keys) {
        w[k] = weights_.at(k);
        auto it = accum_.find(k);
        if (it != accum_.end()) a[k] = it->second;
    }
    return json{{"weights", w},
                {"accum", a},
                {"steps", steps_},
                {"trained_on_count", trained_on_count_},
                {"version", version_}};
}

TaggerModel TaggerModel::from_json(const json& j) {
    TaggerModel m;
    for (const auto& [k, v] : j.at("weights").items()) m.weights_[k] = v.get<double>();
    for (const auto& [k, v] : j.at("accum").items()) m.accum_[k] = v.get<double>();
    m.steps_ = j.value("steps", int64_t{0});
    m.trained_on_count_ = j.value("trained_on_count", int64_t{0});
    m.version_ = j.value("version", int64_t{0});
    return m;
}

std::vector<LocationGuess> tagger_predict(const std::string& text, const TaggerModel& model,
                                          const Gazetteer& gazetteer, int64_t warmup) {
    std::vector<LocationGuess> out;
    auto tokens = tokenize_spans(text);
    for (const auto& [begin, end] : model.predict_spans(tokens, warmup)) {
        std::string span_text;
        for (size_t i = begin; i < end; ++i) {
            if (!span_text.empty()) span_text += ' ';
            span_text += tokens[i].lower;
        }
        auto entry = gazetteer.lookup(span_text);
        if (!entry) continue;  // unresolvable spans are dropped
        LocationGuess g;
        g.name = Gazetteer::normalize(span_text);
        g.lat = entry->lat;
        g.lon = entry->lon;
        g.extractor = ExtractorKind::kTrainedTagger;
        g.score = 0.7;
        g.text_pos = tokens[begin].byte_pos;
        out.push_back(std::move(g));
    }
    return out;
}

std::optional<LocationGuess> fuse(std::vector<LocationGuess> guesses, const Post& post) {
    if (post.geotag) {
        LocationGuess g;
        g.name = "";
        g.lat = post.geotag->lat;
        g.lon = post.geotag->lon;
        g.extractor = ExtractorKind::kGeotag;
        g.score = 1.0;
        g.text_pos = 0;
        return g;
    }
    if (guesses.empty()) return std::nullopt;
    auto rank = [](ExtractorKind k) {
        switch (k) {
            case ExtractorKind::kGeotag: return 0;
            case ExtractorKind::kSubstring: return 1;
            case ExtractorKind::kTrainedTagger: return 2;
            case ExtractorKind::kOffshelfTagger: return 3;
        }
        return 4;
    };
    std::sort(guesses.begin(), guesses.end(), [&](const LocationGuess& a, const LocationGuess& b) {
        if (rank(a.extractor) != rank(b.extractor)) return rank(a.extractor) < rank(b.extractor);
        if (a.score != b.score) return a.score > b.score;
        if (a.text_pos != b.text_pos) return a.text_pos < b.text_pos;
        return a.name < b.name;
    });
    return guesses.front();
}

}  // namespace em

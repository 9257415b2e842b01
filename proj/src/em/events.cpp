#include "em/events.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <set>

#include "em/common.hpp"
#include "em/timeutil.hpp"

using nlohmann::json;

namespace em {

json to_json(const Detection& d) {
    json j{{"post_id", d.post_id},
           {"event_type", d.event_type},
           {"created_at", d.created_at_ms},
           {"provenance", d.provenance},
           {"score", d.score}};
    if (d.location) {
        j["lat"] = d.location->lat;
        j["lon"] = d.location->lon;
    }
    if (!d.location_name.empty()) j["location_name"] = d.location_name;
    return j;
}

Detection detection_from_json(const json& j) {
    Detection d;
    d.post_id = j.at("post_id").get<std::string>();
    d.event_type = j.at("event_type").get<std::string>();
    d.created_at_ms = j.at("created_at").get<int64_t>();
    d.provenance = j.value("provenance", "ml");
    d.score = j.value("score", 1.0);
    if (j.contains("lat") && !j.at("lat").is_null()) {
        d.location = GeoPoint{j.at("lat").get<double>(), j.at("lon").get<double>()};
    }
    d.location_name = j.value("location_name", "");
    return d;
}

json to_json(const DetectedEvent& e) {
    json j{{"event_id", e.event_id},
           {"event_type", e.event_type},
           {"cell_x", e.cell_x},
           {"cell_y", e.cell_y},
           {"bucket_lo", e.bucket_lo},
           {"bucket_hi", e.bucket_hi},
           {"start", e.start_ms},
           {"end", e.end_ms},
           {"member_post_ids", e.member_post_ids},
           {"post_count", e.post_count()},
           {"provenance", e.provenance},
           {"needs_review", e.needs_review}};
    if (e.centroid) {
        j["centroid"] = json{{"lat", e.centroid->lat}, {"lon", e.centroid->lon}};
    }
    return j;
}

DetectedEvent detected_event_from_json(const json& j) {
    DetectedEvent e;
    e.event_id = j.at("event_id").get<std::string>();
    e.event_type = j.at("event_type").get<std::string>();
    e.cell_x = j.value("cell_x", int64_t{0});
    e.cell_y = j.value("cell_y", int64_t{0});
    e.bucket_lo = j.value("bucket_lo", int64_t{0});
    e.bucket_hi = j.value("bucket_hi", int64_t{0});
    e.start_ms = j.value("start", int64_t{0});
    e.end_ms = j.value("end", int64_t{0});
    e.member_post_ids = j.value("member_post_ids", std::vector<std::string>{});
    e.provenance = j.value("provenance", "ml_only");
    e.needs_review = j.value("needs_review", false);
    if (j.contains("centroid") && !j.at("centroid").is_null()) {
        e.centroid = GeoPoint{j.at("centroid").at("lat").get<double>(),
                              j.at("centroid").at("lon").get<double>()};
    }
    return e;
}

EventStore::EventStore(fs::path dir, GridParams grid)
    : journal_(std::move(dir)), grid_(grid) {
    ensure_dir(journal_);
    journal_ /= "journal.jsonl";
    load();
}

void EventStore::load() {
    std::ifstream in(journal_);
    if (!in) return;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            json j = json::parse(line);
            Member m;
            m.post_id = j.at("post_id").get<std::string>();
            m.event_type = j.at("event_type").get<std::string>();
            m.cell_x = j.value("cell_x", int64_t{0});
            m.cell_y = j.value("cell_y", int64_t{0});
            m.bucket = j.value("bucket", int64_t{0});
            m.created_at_ms = j.value("created_at", int64_t{0});
            m.provenance = j.value("provenance", "ml");
            m.review = j.value("review", false);
            if (j.contains("lat") && !j.at("lat").is_null()) {
                m.location = GeoPoint{j.at("lat").get<double>(), j.at("lon").get<double>()};
            }
            members_[{j.at("group").get<std::string>(), m.post_id}] = std::move(m);
        } catch (const std::exception&) {
            continue;  // torn tail line from a crash
        }
    }
}

std::string EventStore::add(const Detection& d) {
    Member m;
    m.post_id = d.post_id;
    m.event_type = d.event_type;
    m.created_at_ms = d.created_at_ms;
    m.provenance = d.provenance;
    m.location = d.location;
    m.review = !d.location.has_value();

    std::string group;
    if (d.location) {
        GridKey key = to_grid(d.location->lat, d.location->lon, d.created_at_ms, grid_);
        m.cell_x = key.cell_x;
        m.cell_y = key.cell_y;
        m.bucket = key.time_bucket;
        group = d.event_type + "|" + std::to_string(key.cell_x) + "|" +
                std::to_string(key.cell_y) + "|" + std::to_string(key.time_bucket);
    } else {
        // locationless: a single-post group of its own, flagged for review
        m.cell_x = m.cell_y = 0;
        m.bucket = d.created_at_ms / 1000 / grid_.bucket_seconds;
        group = d.event_type + "|review|" + d.post_id;
    }

    auto key = std::make_pair(group, d.post_id);
    if (!members_.count(key)) {
        json j{{"group", group},
               {"post_id", d.post_id},
               {"event_type", d.event_type},
               {"cell_x", m.cell_x},
               {"cell_y", m.cell_y},
               {"bucket", m.bucket},
               {"created_at", m.created_at_ms},
               {"provenance", m.provenance},
               {"review", m.review}};
        if (m.location) {
            j["lat"] = m.location->lat;
            j["lon"] = m.location->lon;
        }
        append_line(journal_, j.dump());
        members_[key] = std::move(m);
    }
    return group;
}

size_t EventStore::membership_count() const { return members_.size(); }

std::vector<DetectedEvent> EventStore::merge(
    const std::map<std::pair<std::string, std::string>, Member>& members,
    const GridParams& grid) {
    (void)grid;
    // union-find over group keys: same type and cell, adjacent buckets
    std::map<std::string, std::string> parent;
    std::function<std::string(const std::string&)> find = [&](const std::string& k) {
        auto it = parent.find(k);
        if (it == parent.end() || it->second == k) return k;
        std::string root = find(it->second);
        parent[k] = root;
        return root;
    };
    auto unite = [&](const std::string& a, const std::string& b) {
        std::string ra = find(a), rb = find(b);
        if (ra != rb) parent[std::min(ra, rb) == ra ? rb : ra] = std::min(ra, rb);
    };

    std::set<std::string> groups;
    std::map<std::string, const Member*> group_probe;  // any member per group
    for (const auto& [key, m] : members) {
        groups.insert(key.first);
        parent.emplace(key.first, key.first);
        group_probe.emplace(key.first, &m);
    }
    for (const auto& g : groups) {
        const Member* m = group_probe.at(g);
        if (m->review) continue;
        // neighbor key one bucket later in the same cell
        std::string next = m->event_type + "|" + std::to_string(m->cell_x) + "|" +
                           std::to_string(m->cell_y) + "|" + std::to_string(m->bucket + 1);
        if (groups.count(next)) unite(g, next);
    }

    std::map<std::string, std::vector<const Member*>> merged;
    for (const auto& [key, m] : members) {
        merged[find(key.first)].push_back(&m);
    }

    std::vector<DetectedEvent> out;
    for (auto& [root, mems] : merged) {
        std::sort(mems.begin(), mems.end(),
                  [](const Member* a, const Member* b) { return a->post_id < b->post_id; });
        DetectedEvent e;
        e.event_type = mems.front()->event_type;
        e.cell_x = mems.front()->cell_x;
        e.cell_y = mems.front()->cell_y;
        e.bucket_lo = mems.front()->bucket;
        e.bucket_hi = mems.front()->bucket;
        e.start_ms = mems.front()->created_at_ms;
        e.end_ms = mems.front()->created_at_ms;
        e.needs_review = mems.front()->review;
        double lat_sum = 0, lon_sum = 0;
        int located = 0;
        bool any_corr = false, any_ml = false;
        for (const Member* m : mems) {
            e.member_post_ids.push_back(m->post_id);
            e.bucket_lo = std::min(e.bucket_lo, m->bucket);
            e.bucket_hi = std::max(e.bucket_hi, m->bucket);
            e.start_ms = std::min(e.start_ms, m->created_at_ms);
            e.end_ms = std::max(e.end_ms, m->created_at_ms);
            if (m->location) {
                lat_sum += m->location->lat;
                lon_sum += m->location->lon;
                ++located;
            }
            if (m->provenance == "corroborated") any_corr = true;
            else any_ml = true;
        }
        if (located > 0) e.centroid = GeoPoint{lat_sum / located, lon_sum / located};
        e.provenance = any_corr && any_ml ? "mixed" : (any_corr ? "corroborated" : "ml_only");
        e.event_id = "evt-" + to_hex(fnv1a64(e.event_type + "|" + std::to_string(e.cell_x) + "|" +
                                             std::to_string(e.cell_y) + "|" +
                                             std::to_string(e.bucket_lo) + "|" + root));
        out.push_back(std::move(e));
    }
    std::sort(out.begin(), out.end(), [](const DetectedEvent& a, const DetectedEvent& b) {
        return a.event_id < b.event_id;
    });
    return out;
}

std::vector<DetectedEvent> EventStore::aggregate() const { return merge(members_, grid_); }

std::vector<DetectedEvent> EventStore::aggregate_journal(const fs::path& journal,
                                                         const GridParams& grid) {
    EventStore store(journal.parent_path(), grid);
    return store.aggregate();
}

// ---------------------------------------------------------------------------

void export_geojson(const std::vector<DetectedEvent>& events, const fs::path& path) {
    json features = json::array();
    for (const auto& e : events) {
        json geometry;
        if (e.centroid) {
            geometry = json{{"type", "Point"},
                            {"coordinates", json::array({e.centroid->lon, e.centroid->lat})}};
        } else {
            geometry = nullptr;  // unlocated events carry null geometry
        }
        json properties{{"event_id", e.event_id},
                        {"event_type", e.event_type},
                        {"post_count", e.post_count()},
                        {"provenance", e.provenance},
                        {"time_span", json::array({format_iso8601(e.start_ms),
                                                   format_iso8601(e.end_ms)})},
                        {"member_post_ids", e.member_post_ids},
                        {"needs_review", e.needs_review},
                        {"cell", json::array({e.cell_x, e.cell_y})},
                        {"buckets", json::array({e.bucket_lo, e.bucket_hi})}};
        features.push_back(json{{"type", "Feature"},
                                {"geometry", geometry},
                                {"properties", properties}});
    }
    json fc{{"type", "FeatureCollection"}, {"features", features}};
    atomic_write(path, fc.dump(2));
}

std::vector<DetectedEvent> parse_geojson(const fs::path& path) {
    auto content = read_file(path);
    if (!content) throw std::runtime_error("geojson not readable: " + path.string());
    json fc = json::parse(*content);
    if (fc.value("type", "") != "FeatureCollection" || !fc.contains("features")) {
        throw std::runtime_error("not a GeoJSON FeatureCollection: " + path.string());
    }
    std::vector<DetectedEvent> out;
    for (const auto& f : fc.at("features")) {
        if (f.value("type", "") != "Feature") {
            throw std::runtime_error("non-Feature entry in FeatureCollection");
        }
        const json& props = f.at("properties");
        DetectedEvent e;
        e.event_id = props.at("event_id").get<std::string>();
        e.event_type = props.at("event_type").get<std::string>();
        e.provenance = props.value("provenance", "ml_only");
        e.member_post_ids = props.value("member_post_ids", std::vector<std::string>{});
        e.needs_review = props.value("needs_review", false);
        if (props.contains("cell")) {
            e.cell_x = props.at("cell").at(0).get<int64_t>();
            e.cell_y = props.at("cell").at(1).get<int64_t>();
        }
        if (props.contains("buckets")) {
            e.bucket_lo = props.at("buckets").at(0).get<int64_t>();
            e.bucket_hi = props.at("buckets").at(1).get<int64_t>();
        }
        if (props.contains("time_span")) {
            auto start = parse_timestamp(props.at("time_span").at(0).get<std::string>());
            auto end = parse_timestamp(props.at("time_span").at(1).get<std::string>());
            e.start_ms = start.value_or(0);
            e.end_ms = end.value_or(0);
        }
        const json& geometry = f.at("geometry");
        if (!geometry.is_null()) {
            if (geometry.value("type", "") != "Point") {
                throw std::runtime_error("unexpected geometry type");
            }
            const json& coords = geometry.at("coordinates");
            e.centroid = GeoPoint{coords.at(1).get<double>(), coords.at(0).get<double>()};
        }
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace em

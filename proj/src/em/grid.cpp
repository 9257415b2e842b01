#include "em/grid.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

using nlohmann::json;

namespace em {

GridKey to_grid(double lat, double lon, int64_t epoch_ms, const GridParams& params) {
    if (!valid_lat_lon(lat, lon)) {
        throw std::out_of_range("coordinates out of range: lat=" + std::to_string(lat) +
                                " lon=" + std::to_string(lon));
    }
    GridKey key;
    key.cell_x = static_cast<int64_t>(std::floor(lon / params.cell_deg));
    key.cell_y = static_cast<int64_t>(std::floor(lat / params.cell_deg));
    int64_t epoch_s = epoch_ms >= 0 ? epoch_ms / 1000 : (epoch_ms - 999) / 1000;
    key.time_bucket = epoch_s >= 0 ? epoch_s / params.bucket_seconds
                                   : (epoch_s - params.bucket_seconds + 1) / params.bucket_seconds;
    return key;
}

json to_json(const WeakLabel& l) {
    return json{{"post_id", l.post_id},
                {"label", l.label},
                {"supporting_event_id", l.supporting_event_id},
                {"grid_key",
                 json{{"cell_x", l.grid_key.cell_x},
                      {"cell_y", l.grid_key.cell_y},
                      {"time_bucket", l.grid_key.time_bucket}}},
                {"labeled_at", l.labeled_at_ms}};
}

void GridIndex::advance_watermark(int64_t bucket) {
    if (bucket <= watermark_bucket_) return;
    watermark_bucket_ = bucket;
    int64_t cutoff = watermark_bucket_ - params_.horizon_buckets;
    for (auto it = cells_.begin(); it != cells_.end();) {
        if (it->first.time_bucket < cutoff) {
            it = cells_.erase(it);
        } else {
            ++it;
        }
    }
}

bool GridIndex::index_event(const CorroborativeEvent& event) {
    if (!valid_lat_lon(event.lat, event.lon)) return false;
    GridKey key = to_grid(event.lat, event.lon, event.occurred_at_ms, params_);
    advance_watermark(key.time_bucket);
    if (key.time_bucket < watermark_bucket_ - params_.horizon_buckets) return false;  // expired
    auto& bucket = cells_[key];
    for (auto& existing : bucket) {
        if (existing.id == event.id) {
            existing = event;
            return true;
        }
    }
    bucket.push_back(event);
    return true;
}

std::optional<CorroborativeEvent> GridIndex::find_support(const std::string& event_type,
                                                          const GridKey& key, double lat,
                                                          double lon) const {
    const CorroborativeEvent* best = nullptr;
    double best_d2 = 0;
    for (int64_t dx = -1; dx <= 1; ++dx) {
        for (int64_t dy = -1; dy <= 1; ++dy) {
            for (int64_t db = -1; db <= 1; ++db) {
                GridKey probe{key.cell_x + dx, key.cell_y + dy, key.time_bucket + db};
                auto it = cells_.find(probe);
                if (it == cells_.end()) continue;
                for (const auto& e : it->second) {
                    if (e.event_type != event_type) continue;
                    double dlat = e.lat - lat;
                    double dlon = e.lon - lon;
                    double d2 = dlat * dlat + dlon * dlon;
                    if (!best || d2 < best_d2 ||
                        (d2 == best_d2 && (e.occurred_at_ms < best->occurred_at_ms ||
                                           (e.occurred_at_ms == best->occurred_at_ms &&
                                            e.id < best->id)))) {
                        best = &e;
                        best_d2 = d2;
                    }
                }
            }
        }
    }
    if (!best) return std::nullopt;
    return *best;
}

std::vector<CorroborativeEvent> GridIndex::find_all_exact(const std::string& event_type,
                                                          const GridKey& key) const {
    std::vector<CorroborativeEvent> out;
    auto it = cells_.find(key);
    if (it == cells_.end()) return out;
    for (const auto& e : it->second) {
        if (e.event_type == event_type) out.push_back(e);
    }
    std::sort(out.begin(), out.end(),
              [](const CorroborativeEvent& a, const CorroborativeEvent& b) { return a.id < b.id; });
    return out;
}

size_t GridIndex::event_count() const {
    size_t n = 0;
    for (const auto& [key, events] : cells_) n += events.size();
    return n;
}

json GridIndex::to_json() const {
    json events = json::array();
    for (const auto& [key, bucket] : cells_) {
        for (const auto& e : bucket) events.push_back(em::to_json(e));
    }
    return json{{"params",
                 json{{"cell_deg", params_.cell_deg},
                      {"bucket_seconds", params_.bucket_seconds},
                      {"horizon_buckets", params_.horizon_buckets}}},
                {"watermark_bucket", watermark_bucket_},
                {"events", events}};
}

GridIndex GridIndex::from_json(const json& j) {
    GridParams p;
    p.cell_deg = j.at("params").value("cell_deg", 0.1);
    p.bucket_seconds = j.at("params").value("bucket_seconds", int64_t{86400});
    p.horizon_buckets = j.at("params").value("horizon_buckets", int64_t{3});
    GridIndex index(p);
    for (const auto& e : j.at("events")) {
        index.index_event(corroborative_event_from_json(e));
    }
    if (j.contains("watermark_bucket")) {
        index.advance_watermark(j.at("watermark_bucket").get<int64_t>());
    }
    return index;
}

std::optional<WeakLabel> integrate(const std::string& post_id, const std::string& event_type,
                                   double lat, double lon, int64_t created_at_ms, GridIndex& index,
                                   int64_t now_ms) {
    GridKey key = to_grid(lat, lon, created_at_ms, index.params());
    index.observe_bucket(key.time_bucket);
    auto support = index.find_support(event_type, key, lat, lon);
    if (!support) return std::nullopt;
    WeakLabel label;
    label.post_id = post_id;
    label.supporting_event_id = support->id;
    label.grid_key = key;
    label.labeled_at_ms = now_ms;
    return label;
}

}  // namespace em

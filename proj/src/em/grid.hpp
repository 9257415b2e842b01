#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "em/types.hpp"

namespace em {

struct GridParams {
    double cell_deg = 0.1;
    int64_t bucket_seconds = 86400;
    int64_t horizon_buckets = 3;  // index expiry; covers the news-source lag
};

// Spatio-temporal cell identity shared by posts and corroborative events.
struct GridKey {
    int64_t cell_x = 0;
    int64_t cell_y = 0;
    int64_t time_bucket = 0;
    auto operator<=>(const GridKey&) const = default;
};

// floor semantics: a coordinate exactly on a boundary belongs to the
// higher-index cell. Throws std::out_of_range for invalid coordinates.
GridKey to_grid(double lat, double lon, int64_t epoch_ms, const GridParams& params);

struct WeakLabel {
    std::string post_id;
    std::string label = "relevant";  // only positive labels exist here
    std::string supporting_event_id;
    GridKey grid_key;
    int64_t labeled_at_ms = 0;
};

nlohmann::json to_json(const WeakLabel& l);

// Corroborative events indexed by grid cell, with lazy expiry beyond the
// horizon. Single-writer; reads and writes interleave on one loop.
class GridIndex {
  public:
    explicit GridIndex(GridParams params = {}) : params_(params) {}

    // Inserts under the event's key; duplicate event ids are refreshed, not
    // duplicated. Returns false for events with invalid coordinates.
    bool index_event(const CorroborativeEvent& event);

    // Matching event of the same type in the given cell, its 8 spatial
    // neighbors, within +-1 time bucket. Deterministic pick: nearest to
    // (lat, lon), ties by occurred_at then id.
    std::optional<CorroborativeEvent> find_support(const std::string& event_type,
                                                   const GridKey& key, double lat,
                                                   double lon) const;

    // Every matching event in exactly this cell and bucket, ordered by id.
    std::vector<CorroborativeEvent> find_all_exact(const std::string& event_type,
                                                   const GridKey& key) const;

    // Lookups also drive lazy expiry: observing a bucket advances the
    // watermark and drops entries beyond the horizon.
    void observe_bucket(int64_t bucket) { advance_watermark(bucket); }

    const GridParams& params() const { return params_; }
    size_t event_count() const;

    nlohmann::json to_json() const;
    static GridIndex from_json(const nlohmann::json& j);

  private:
    GridParams params_;
    std::map<GridKey, std::vector<CorroborativeEvent>> cells_;
    int64_t watermark_bucket_ = INT64_MIN;

    void advance_watermark(int64_t bucket);
};

// The corroborative-integration join: a located post co-occurring with a
// same-type event yields a weak positive label; otherwise nothing (posts
// are never negatively labeled here).
std::optional<WeakLabel> integrate(const std::string& post_id, const std::string& event_type,
                                   double lat, double lon, int64_t created_at_ms, GridIndex& index,
                                   int64_t now_ms);

}  // namespace em

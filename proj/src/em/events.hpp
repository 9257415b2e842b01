#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "em/fsutil.hpp"
#include "em/grid.hpp"

namespace em {

// One detection: a post judged relevant, either by corroborative
// integration or by the classifier ensemble.
struct Detection {
    std::string post_id;
    std::string event_type;
    int64_t created_at_ms = 0;
    std::optional<GeoPoint> location;
    std::string location_name;
    std::string provenance;  // corroborated | ml
    double score = 1.0;
};

nlohmann::json to_json(const Detection& d);
Detection detection_from_json(const nlohmann::json& j);

struct DetectedEvent {
    std::string event_id;
    std::string event_type;
    int64_t cell_x = 0, cell_y = 0;
    int64_t bucket_lo = 0, bucket_hi = 0;
    std::optional<GeoPoint> centroid;  // mean of member post locations
    int64_t start_ms = 0, end_ms = 0;
    std::vector<std::string> member_post_ids;
    std::string provenance;  // corroborated | ml_only | mixed
    bool needs_review = false;  // locationless single-post events

    int64_t post_count() const { return static_cast<int64_t>(member_post_ids.size()); }
};

nlohmann::json to_json(const DetectedEvent& e);
DetectedEvent detected_event_from_json(const nlohmann::json& j);

// Append-only membership journal plus read-time grouping. Insertions are
// idempotent on (cell, post) so crash replays cannot double-count, and the
// final grouping is a pure function of the membership set, independent of
// arrival order.
class EventStore {
  public:
    EventStore(fs::path dir, GridParams grid);

    // records the detection's membership durably; returns the group key
    std::string add(const Detection& d);

    // current merged view: same cell, adjacent buckets coalesce
    std::vector<DetectedEvent> aggregate() const;

    size_t membership_count() const;
    static std::vector<DetectedEvent> aggregate_journal(const fs::path& journal,
                                                        const GridParams& grid);

  private:
    fs::path journal_;
    GridParams grid_;
    struct Member {
        std::string post_id;
        std::string event_type;
        int64_t cell_x, cell_y, bucket;
        std::optional<GeoPoint> location;
        int64_t created_at_ms;
        std::string provenance;
        bool review;
    };
    std::map<std::pair<std::string, std::string>, Member> members_;  // (group key, post) -> row

    void load();
    static std::vector<DetectedEvent> merge(
        const std::map<std::pair<std::string, std::string>, Member>& members,
        const GridParams& grid);
};

// GeoJSON FeatureCollection of Point features (null geometry for
// locationless review events). Validates its own output grammar.
void export_geojson(const std::vector<DetectedEvent>& events, const fs::path& path);
std::vector<DetectedEvent> parse_geojson(const fs::path& path);

}  // namespace em

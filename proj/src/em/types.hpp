#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace em {

struct GeoPoint {
    double lat = 0;
    double lon = 0;
};

inline bool valid_lat_lon(double lat, double lon) {
    return lat >= -90.0 && lat <= 90.0 && lon >= -180.0 && lon <= 180.0;
}

// One probabilistic-stream item. Geotags are rare in realistic corpora;
// nothing downstream may assume their presence.
struct Post {
    std::string id;
    std::string source = "synthetic";  // twitter-like | facebook-like | news | synthetic
    std::string text;
    int64_t created_at_ms = 0;
    std::optional<GeoPoint> geotag;
    std::string stream_keyword;
    std::map<std::string, std::string> metadata;
};

nlohmann::json to_json(const Post& p);
Post post_from_json(const nlohmann::json& j);

// Ground-truth event from an expert source.
struct CorroborativeEvent {
    std::string id;
    std::string event_type;   // landslide | wildfire | flood | earthquake | rainfall
    std::string source_name;  // trmm, usgs_eq, ghcnd, firms_modis, firms_viirs, flood_gauge, news
    double lat = 0;
    double lon = 0;
    int64_t occurred_at_ms = 0;
    std::optional<double> magnitude;
    std::string magnitude_unit;
    std::string location_name;
    // primary_ground_truth | secondary_ground_truth | late_corroboration
    std::string confidence = "primary_ground_truth";
};

nlohmann::json to_json(const CorroborativeEvent& e);
CorroborativeEvent corroborative_event_from_json(const nlohmann::json& j);

struct EmbeddedPost {
    Post post;
    std::vector<std::string> tokens;
    std::vector<float> vector;
    std::string embedding_version;
    bool zero_vector = false;
};

nlohmann::json to_json(const EmbeddedPost& p);
EmbeddedPost embedded_post_from_json(const nlohmann::json& j);

}  // namespace em

#include "em/types.hpp"

using nlohmann::json;

namespace em {

json to_json(const Post& p) {
    json j{{"id", p.id},
           {"source", p.source},
           {"text", p.text},
           {"created_at", p.created_at_ms}};
    if (p.geotag) {
        j["lat"] = p.geotag->lat;
        j["lon"] = p.geotag->lon;
    }
    if (!p.stream_keyword.empty()) j["stream_keyword"] = p.stream_keyword;
    if (!p.metadata.empty()) j["metadata"] = p.metadata;
    return j;
}

Post post_from_json(const json& j) {
    Post p;
    p.id = j.at("id").get<std::string>();
    p.source = j.value("source", "synthetic");
    p.text = j.at("text").get<std::string>();
    p.created_at_ms = j.at("created_at").get<int64_t>();
    if (j.contains("lat") && j.contains("lon") && !j.at("lat").is_null()) {
        p.geotag = GeoPoint{j.at("lat").get<double>(), j.at("lon").get<double>()};
    }
    p.stream_keyword = j.value("stream_keyword", "");
    if (j.contains("metadata")) {
        p.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
    }
    return p;
}

json to_json(const CorroborativeEvent& e) {
    json j{{"id", e.id},
           {"event_type", e.event_type},
           {"source_name", e.source_name},
           {"lat", e.lat},
           {"lon", e.lon},
           {"occurred_at", e.occurred_at_ms},
           {"confidence", e.confidence}};
    if (e.magnitude) {
        j["magnitude"] = *e.magnitude;
        j["magnitude_unit"] = e.magnitude_unit;
    }
    if (!e.location_name.empty()) j["location_name"] = e.location_name;
    return j;
}

CorroborativeEvent corroborative_event_from_json(const json& j) {
    CorroborativeEvent e;
    e.id = j.at("id").get<std::string>();
    e.event_type = j.at("event_type").get<std::string>();
    e.source_name = j.value("source_name", "");
    e.lat = j.at("lat").get<double>();
    e.lon = j.at("lon").get<double>();
    e.occurred_at_ms = j.at("occurred_at").get<int64_t>();
    e.confidence = j.value("confidence", "primary_ground_truth");
    if (j.contains("magnitude") && !j.at("magnitude").is_null()) {
        e.magnitude = j.at("magnitude").get<double>();
        e.magnitude_unit = j.value("magnitude_unit", "");
    }
    e.location_name = j.value("location_name", "");
    return e;
}

json to_json(const EmbeddedPost& p) {
    return json{{"post", to_json(p.post)},
                {"tokens", p.tokens},
                {"vector", p.vector},
                {"embedding_version", p.embedding_version},
                {"zero_vector", p.zero_vector}};
}

EmbeddedPost embedded_post_from_json(const json& j) {
    EmbeddedPost p;
    p.post = post_from_json(j.at("post"));
    p.tokens = j.at("tokens").get<std::vector<std::string>>();
    p.vector = j.at("vector").get<std::vector<float>>();
    p.embedding_version = j.value("embedding_version", "");
    p.zero_vector = j.value("zero_vector", false);
    return p;
}

}  // namespace em

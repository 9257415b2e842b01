#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "em/fsutil.hpp"

namespace em {

// Topic names a run actually used; persisted by the pipeline at startup so
// stats and export work on any config.
struct TopicMap {
    std::string posts = "posts";
    std::string filtered = "posts.filtered";
    std::string located = "posts.located";
    std::string unlabeled = "posts.unlabeled";
    std::string irrelevant = "posts.irrelevant";
    std::string training = "training";
    std::string detections = "detections";
    std::string events = "events";
    std::string pending = "pending";

    nlohmann::json to_json() const;
    static TopicMap from_json(const nlohmann::json& j);
    static TopicMap load(const fs::path& data_dir);  // defaults when absent
    void save(const fs::path& data_dir, const nlohmann::json& extra = {}) const;
};

struct ClassifierStatus {
    std::string id;
    std::string status;
    int64_t error_count = 0;
    int64_t samples_seen = 0;
    double p_mean = 0;
    double s_std = 0;
    double p_max = 0;
    double s_max = 0;
    int64_t created_at_ms = 0;
};

struct StatsReport {
    int64_t posts_total = 0;
    int64_t filtered_total = 0;
    int64_t filtered_dynamic = 0;
    int64_t predicted_irrelevant = 0;
    int64_t weak_labeled = 0;
    int64_t detections_total = 0;
    int64_t events_total = 0;
    double irrelevant_fraction = 0;         // (filtered + predicted irrelevant) / posts
    double stopword_filtered_fraction = 0;  // filtered / irrelevant items
    double weak_labeled_fraction = 0;       // weak labels / posts
    std::map<int64_t, int64_t> posts_per_event;  // post count -> event count
    std::vector<ClassifierStatus> classifiers;
    std::vector<nlohmann::json> drift_timeline;

    nlohmann::json to_json() const;
    std::string pretty() const;
};

// Reads persisted topics, pool, and event store. A missing directory is an
// error; an empty one yields a zeroed report.
StatsReport compute_stats(const fs::path& run_dir);

}  // namespace em

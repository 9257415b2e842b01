#include "em/stats.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "em/bus.hpp"
#include "em/classify.hpp"
#include "em/events.hpp"
#include "em/timeutil.hpp"

using nlohmann::json;

namespace em {

json TopicMap::to_json() const {
    return json{{"posts", posts},         {"filtered", filtered},   {"located", located},
                {"unlabeled", unlabeled}, {"irrelevant", irrelevant}, {"training", training},
                {"detections", detections}, {"events", events},     {"pending", pending}};
}

TopicMap TopicMap::from_json(const json& j) {
    TopicMap t;
    t.posts = j.value("posts", t.posts);
    t.filtered = j.value("filtered", t.filtered);
    t.located = j.value("located", t.located);
    t.unlabeled = j.value("unlabeled", t.unlabeled);
    t.irrelevant = j.value("irrelevant", t.irrelevant);
    t.training = j.value("training", t.training);
    t.detections = j.value("detections", t.detections);
    t.events = j.value("events", t.events);
    t.pending = j.value("pending", t.pending);
    return t;
}

TopicMap TopicMap::load(const fs::path& data_dir) {
    auto content = read_file(data_dir / "pipeline.json");
    if (!content) return TopicMap{};
    try {
        json j = json::parse(*content);
        if (j.contains("topics")) return from_json(j.at("topics"));
    } catch (const std::exception&) {
    }
    return TopicMap{};
}

void TopicMap::save(const fs::path& data_dir, const json& extra) const {
    json j = extra.is_object() ? extra : json::object();
    j["topics"] = to_json();
    j["written_at"] = format_iso8601(wall_now_ms());
    atomic_write(data_dir / "pipeline.json", j.dump(2));
}

json StatsReport::to_json() const {
    json hist = json::object();
    for (const auto& [count, events] : posts_per_event) {
        hist[std::to_string(count)] = events;
    }
    json clf = json::array();
    for (const auto& c : classifiers) {
        clf.push_back(json{{"id", c.id},
                           {"status", c.status},
                           {"error_count", c.error_count},
                           {"samples_seen", c.samples_seen},
                           {"p_mean", c.p_mean},
                           {"s_std", c.s_std},
                           {"p_max", c.p_max},
                           {"s_max", c.s_max},
                           {"created_at", c.created_at_ms}});
    }
    return json{{"posts_total", posts_total},
                {"filtered_total", filtered_total},
                {"filtered_dynamic", filtered_dynamic},
                {"predicted_irrelevant", predicted_irrelevant},
                {"weak_labeled", weak_labeled},
                {"detections_total", detections_total},
                {"events_total", events_total},
                {"irrelevant_fraction", irrelevant_fraction},
                {"stopword_filtered_fraction", stopword_filtered_fraction},
                {"weak_labeled_fraction", weak_labeled_fraction},
                {"posts_per_event", hist},
                {"classifiers", clf},
                {"drift_timeline", drift_timeline}};
}

std::string StatsReport::pretty() const {
    std::ostringstream out;
    out << "posts ingested:        " << posts_total << "\n";
    out << "stopword filtered:     " << filtered_total << " (" << filtered_dynamic
        << " by dynamic terms)\n";
    out << "predicted irrelevant:  " << predicted_irrelevant << "\n";
    out << "irrelevant fraction:   " << irrelevant_fraction << "\n";
    out << "stopword share:        " << stopword_filtered_fraction << " of irrelevant items\n";
    out << "weak labels:           " << weak_labeled << " (" << weak_labeled_fraction
        << " of posts)\n";
    out << "detections:            " << detections_total << "\n";
    out << "events:                " << events_total << "\n";
    out << "posts per event:       ";
    bool first = true;
    for (const auto& [count, events] : posts_per_event) {
        if (!first) out << ", ";
        out << count << "->" << events;
        first = false;
    }
    out << "\n";
    out << "classifiers:\n";
    for (const auto& c : classifiers) {
        out << "  " << c.id << " [" << c.status << "] errors=" << c.error_count
            << " seen=" << c.samples_seen << " p'=" << c.p_mean << " s'=" << c.s_std << "\n";
    }
    out << "drift events:          " << drift_timeline.size() << "\n";
    return out.str();
}

StatsReport compute_stats(const fs::path& run_dir) {
    if (!fs::exists(run_dir)) {
        throw std::runtime_error("run directory does not exist: " + run_dir.string());
    }
    StatsReport report;
    TopicMap topics = TopicMap::load(run_dir);
    MessageBus bus(run_dir);

    report.posts_total = bus.topic_end(topics.posts);

    std::set<std::string> filtered_ids, dynamic_ids;
    for (const auto& m : bus.read_all(topics.filtered)) {
        try {
            json j = json::parse(m.payload);
            std::string id = j.at("post").at("id").get<std::string>();
            filtered_ids.insert(id);
            if (j.value("dynamic", false)) dynamic_ids.insert(id);
        } catch (const std::exception&) {
        }
    }
    report.filtered_total = static_cast<int64_t>(filtered_ids.size());
    report.filtered_dynamic = static_cast<int64_t>(dynamic_ids.size());

    std::set<std::string> irrelevant_ids;
    for (const auto& m : bus.read_all(topics.irrelevant)) {
        try {
            irrelevant_ids.insert(json::parse(m.payload).at("post_id").get<std::string>());
        } catch (const std::exception&) {
        }
    }
    report.predicted_irrelevant = static_cast<int64_t>(irrelevant_ids.size());

    std::set<std::string> weak_ids, detection_ids;
    for (const auto& m : bus.read_all(topics.training)) {
        try {
            json j = json::parse(m.payload);
            if (j.value("label", "") == "relevant") {
                weak_ids.insert(j.at("post_id").get<std::string>());
            }
        } catch (const std::exception&) {
        }
    }
    report.weak_labeled = static_cast<int64_t>(weak_ids.size());
    for (const auto& m : bus.read_all(topics.detections)) {
        try {
            detection_ids.insert(json::parse(m.payload).at("post_id").get<std::string>());
        } catch (const std::exception&) {
        }
    }
    report.detections_total = static_cast<int64_t>(detection_ids.size());

    if (report.posts_total > 0) {
        report.irrelevant_fraction =
            static_cast<double>(report.filtered_total + report.predicted_irrelevant) /
            static_cast<double>(report.posts_total);
        report.weak_labeled_fraction =
            static_cast<double>(report.weak_labeled) / static_cast<double>(report.posts_total);
    }
    int64_t irrelevant_items = report.filtered_total + report.predicted_irrelevant;
    if (irrelevant_items > 0) {
        report.stopword_filtered_fraction =
            static_cast<double>(report.filtered_total) / static_cast<double>(irrelevant_items);
    }

    // events store
    fs::path journal = run_dir / "events" / "journal.jsonl";
    if (fs::exists(journal)) {
        GridParams grid;  // grid parameters recorded at run start
        auto pipeline = read_file(run_dir / "pipeline.json");
        if (pipeline) {
            try {
                json j = json::parse(*pipeline);
                if (j.contains("grid")) {
                    grid.cell_deg = j.at("grid").value("cell_deg", grid.cell_deg);
                    grid.bucket_seconds = j.at("grid").value("bucket_seconds", grid.bucket_seconds);
                }
            } catch (const std::exception&) {
            }
        }
        auto events = EventStore::aggregate_journal(journal, grid);
        report.events_total = static_cast<int64_t>(events.size());
        for (const auto& e : events) {
            report.posts_per_event[e.post_count()] += 1;
        }
    }

    // pool state
    fs::path pool_dir = run_dir / "pool";
    if (fs::exists(pool_dir / "manifest.json")) {
        auto pool = ClassifierPool::load(pool_dir, PoolConfig{});
        std::vector<const ClassifierRecord*> all;
        for (const auto* r : pool.active()) all.push_back(r);
        // archived records matter to the report too
        json manifest = json::parse(*read_file(pool_dir / "manifest.json"));
        for (const auto& id : manifest.value("archived", std::vector<std::string>{})) {
            if (auto* r = pool.find(id)) all.push_back(r);
        }
        for (const auto* r : all) {
            ClassifierStatus s;
            s.id = r->id;
            s.status = r->status;
            s.error_count = r->eddm.error_count;
            s.samples_seen = r->eddm.samples_seen;
            s.p_mean = r->eddm.p_mean;
            s.s_std = r->eddm.s_std();
            s.p_max = r->eddm.p_max;
            s.s_max = r->eddm.s_max;
            s.created_at_ms = r->created_at_ms;
            report.classifiers.push_back(std::move(s));
        }
    }

    // drift timeline
    if (auto log = read_file(run_dir / "drift_log.jsonl")) {
        size_t start = 0;
        while (start < log->size()) {
            size_t end = log->find('\n', start);
            if (end == std::string::npos) end = log->size();
            if (end > start) {
                try {
                    report.drift_timeline.push_back(json::parse(log->substr(start, end - start)));
                } catch (const std::exception&) {
                }
            }
            start = end + 1;
        }
    }
    return report;
}

}  // namespace em

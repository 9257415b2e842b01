#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "em/fsutil.hpp"

namespace em {

// Synthetic drifting-stream generator. An event is a weighted sum of active
// signals; posts sample tokens from the active signal vocabularies
// (relevant) or from confounder vocabularies (irrelevant), and the drift
// schedule changes which vocabularies are active over time.
struct SignalSpec {
    std::string name;
    std::vector<std::string> tokens;
    double coefficient = 1.0;
};

struct ConfounderSpec {
    std::string name;
    std::vector<std::string> tokens;  // long-tail pool
    double weight = 1.0;
};

struct DriftEntry {
    std::string kind;  // gradual | sudden | cyclic | flash
    int64_t at_post = 0;
    int64_t from_post = 0, to_post = 0;      // gradual ramp
    int64_t period_posts = 0, width_posts = 0;  // cyclic window [nP, nP+w)
    int64_t duration_posts = 0;              // flash
    std::vector<std::string> signals;        // replacement active set
    std::vector<std::string> confounders;    // replacement active set
    std::vector<std::string> tokens;         // flash burst tokens
    std::string confounder;                  // cyclic extra pool
};

struct GeneratorModel {
    std::string event_type = "landslide";
    std::vector<std::string> keywords;
    int64_t post_count = 10000;
    double relevant_fraction = 0.35;
    int64_t start_time_ms = 0;
    double posts_per_hour = 2000;
    std::string cities_csv;
    double corroborative_coverage = 0.045;  // fraction of relevant posts with planted events
    double geotag_fraction_irrelevant = 0.01;
    double city_mention_irrelevant = 0.1;
    // five terms planted to dominate the irrelevant windows; their total
    // per-post probability controls the dynamically filterable share
    std::vector<std::string> hot_confounder_terms;
    double hot_term_probability = 0.15;
    std::vector<std::string> common_tokens;
    std::vector<SignalSpec> signals;
    std::vector<std::string> active_signals;
    std::vector<ConfounderSpec> confounders;
    std::vector<std::string> active_confounders;
    std::vector<DriftEntry> drift_schedule;
    // posts-per-physical-event distribution: (count, probability)
    std::vector<std::pair<int, double>> posts_per_event;

    static GeneratorModel from_json(const nlohmann::json& j);
    static GeneratorModel load(const fs::path& file);
};

struct GeneratorOutput {
    fs::path corpus;    // posts, JSON lines
    fs::path truth;     // {id, relevant, event_key, covered}
    fs::path corr;      // planted corroborative fixture rows
    fs::path manifest;  // counts and file digests
    int64_t posts = 0;
    int64_t relevant = 0;
    int64_t covered = 0;  // posts of physical events with a planted record
    int64_t planted_events = 0;
};

// Deterministic for a fixed (model, seed): identical bytes in every file.
GeneratorOutput generate_stream(const GeneratorModel& model, uint64_t seed, const fs::path& out);

struct TruthRecord {
    std::string id;
    bool relevant = false;
    std::string event_key;
    bool covered = false;
};

std::map<std::string, TruthRecord> load_truth(const fs::path& truth_file);

// Canned models. The paper-shaped one has a >60% irrelevant stream, planted
// corroboration under 5%, and five hot confounder terms sized so dynamic
// stopwords catch 10-20% of irrelevant posts. The drift one is a balanced
// stream with a sudden vocabulary swap halfway through.
nlohmann::json paper_fixture_model(const std::string& cities_csv, int64_t post_count = 10000);
nlohmann::json drift_experiment_model(const std::string& cities_csv, int64_t post_count = 20000,
                                      int64_t drift_at = 10000);

}  // namespace em

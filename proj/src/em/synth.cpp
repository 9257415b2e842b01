#include "em/synth.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "em/common.hpp"
#include "em/timeutil.hpp"
#include "em/types.hpp"

using nlohmann::json;

namespace em {

namespace {

std::vector<std::string> str_list(const json& j, const char* key) {
    std::vector<std::string> out;
    if (j.contains(key)) {
        for (const auto& v : j.at(key)) out.push_back(v.get<std::string>());
    }
    return out;
}

}  // namespace

GeneratorModel GeneratorModel::from_json(const json& j) {
    GeneratorModel m;
    m.event_type = j.value("event_type", "landslide");
    m.keywords = str_list(j, "keywords");
    if (m.keywords.empty()) m.keywords = {"landslide", "mudslide", "rockslide"};
    m.post_count = j.value("post_count", int64_t{10000});
    m.relevant_fraction = j.value("relevant_fraction", 0.35);
    if (j.contains("start_time")) {
        auto t = parse_timestamp(j.at("start_time").get<std::string>());
        if (!t) throw std::invalid_argument("model: bad start_time");
        m.start_time_ms = *t;
    }
    m.posts_per_hour = j.value("posts_per_hour", 2000.0);
    m.cities_csv = j.value("cities_csv", "");
    m.corroborative_coverage = j.value("corroborative_coverage", 0.045);
    m.geotag_fraction_irrelevant = j.value("geotag_fraction_irrelevant", 0.01);
    m.city_mention_irrelevant = j.value("city_mention_irrelevant", 0.1);
    m.hot_confounder_terms = str_list(j, "hot_confounder_terms");
    m.hot_term_probability = j.value("hot_term_probability", 0.15);
    m.common_tokens = str_list(j, "common_tokens");

    if (j.contains("signals")) {
        for (const auto& s : j.at("signals")) {
            SignalSpec spec;
            spec.name = s.at("name").get<std::string>();
            spec.tokens = str_list(s, "tokens");
            spec.coefficient = s.value("coefficient", 1.0);
            m.signals.push_back(std::move(spec));
        }
    }
    m.active_signals = str_list(j, "active_signals");
    if (j.contains("confounders")) {
        for (const auto& c : j.at("confounders")) {
            ConfounderSpec spec;
            spec.name = c.at("name").get<std::string>();
            spec.tokens = str_list(c, "tokens");
            spec.weight = c.value("weight", 1.0);
            m.confounders.push_back(std::move(spec));
        }
    }
    m.active_confounders = str_list(j, "active_confounders");

    if (j.contains("drift_schedule")) {
        for (const auto& d : j.at("drift_schedule")) {
            DriftEntry e;
            e.kind = d.at("kind").get<std::string>();
            e.at_post = d.value("at_post", int64_t{0});
            e.from_post = d.value("from_post", int64_t{0});
            e.to_post = d.value("to_post", int64_t{0});
            e.period_posts = d.value("period_posts", int64_t{0});
            e.width_posts = d.value("width_posts", int64_t{0});
            e.duration_posts = d.value("duration_posts", int64_t{0});
            e.signals = str_list(d, "signals");
            e.confounders = str_list(d, "confounders");
            e.tokens = str_list(d, "tokens");
            e.confounder = d.value("confounder", "");
            if (e.kind != "gradual" && e.kind != "sudden" && e.kind != "cyclic" &&
                e.kind != "flash") {
                throw std::invalid_argument("model: unknown drift kind '" + e.kind + "'");
            }
            m.drift_schedule.push_back(std::move(e));
        }
    }

    if (j.contains("posts_per_event")) {
        for (const auto& p : j.at("posts_per_event")) {
            m.posts_per_event.emplace_back(p.at(0).get<int>(), p.at(1).get<double>());
        }
    } else {
        m.posts_per_event = {{1, 0.58}, {2, 0.20}, {3, 0.12}, {4, 0.04},
                             {5, 0.02}, {8, 0.03}, {16, 0.01}};
    }
    return m;
}

GeneratorModel GeneratorModel::load(const fs::path& file) {
    auto content = read_file(file);
    if (!content) throw std::invalid_argument("model file not readable: " + file.string());
    return from_json(json::parse(*content));
}

namespace {

struct City {
    std::string name;
    double lat, lon;
};

std::vector<City> load_cities(const fs::path& csv) {
    std::vector<City> cities;
    std::ifstream in(csv);
    if (!in) throw std::runtime_error("cities csv not readable: " + csv.string());
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto c1 = line.rfind(',');
        if (c1 == std::string::npos || c1 == 0) continue;
        auto c2 = line.rfind(',', c1 - 1);
        if (c2 == std::string::npos) continue;
        try {
            cities.push_back(City{line.substr(0, c2), std::stod(line.substr(c2 + 1, c1 - c2 - 1)),
                                  std::stod(line.substr(c1 + 1))});
        } catch (const std::exception&) {
            continue;
        }
    }
    if (cities.empty()) throw std::runtime_error("cities csv holds no rows: " + csv.string());
    return cities;
}

struct ActiveVocab {
    std::vector<const SignalSpec*> signals;
    std::vector<const ConfounderSpec*> confounders;
    std::vector<std::string> flash_tokens;
};

class Schedule {
  public:
    Schedule(const GeneratorModel& m) : model_(m) {
        for (const auto& s : m.signals) by_signal_[s.name] = &s;
        for (const auto& c : m.confounders) by_conf_[c.name] = &c;
        base_signals_ = m.active_signals;
        if (base_signals_.empty()) {
            for (const auto& s : m.signals) base_signals_.push_back(s.name);
        }
        base_confounders_ = m.active_confounders;
        if (base_confounders_.empty()) {
            for (const auto& c : m.confounders) base_confounders_.push_back(c.name);
        }
    }

    // active vocabularies at post index i; `mix` in [0,1) resolves gradual ramps
    ActiveVocab at(int64_t i, double mix) const {
        std::vector<std::string> signals = base_signals_;
        std::vector<std::string> confounders = base_confounders_;
        std::vector<std::string> flash;
        for (const auto& d : model_.drift_schedule) {
            if (d.kind == "sudden" && i >= d.at_post) {
                if (!d.signals.empty()) signals = d.signals;
                if (!d.confounders.empty()) confounders = d.confounders;
            } else if (d.kind == "gradual" && i >= d.from_post) {
                double p = d.to_post > d.from_post
                               ? std::min(1.0, static_cast<double>(i - d.from_post) /
                                                   static_cast<double>(d.to_post - d.from_post))
                               : 1.0;
                if (mix < p) {
                    if (!d.signals.empty()) signals = d.signals;
                    if (!d.confounders.empty()) confounders = d.confounders;
                }
            } else if (d.kind == "cyclic" && d.period_posts > 0) {
                if (i % d.period_posts < d.width_posts && !d.confounder.empty()) {
                    confounders.push_back(d.confounder);
                }
            } else if (d.kind == "flash") {
                if (i >= d.at_post && i < d.at_post + d.duration_posts) {
                    for (const auto& t : d.tokens) flash.push_back(t);
                }
            }
        }
        ActiveVocab v;
        for (const auto& name : signals) {
            auto it = by_signal_.find(name);
            if (it != by_signal_.end()) v.signals.push_back(it->second);
        }
        for (const auto& name : confounders) {
            auto it = by_conf_.find(name);
            if (it != by_conf_.end()) v.confounders.push_back(it->second);
        }
        v.flash_tokens = std::move(flash);
        return v;
    }

  private:
    const GeneratorModel& model_;
    std::map<std::string, const SignalSpec*> by_signal_;
    std::map<std::string, const ConfounderSpec*> by_conf_;
    std::vector<std::string> base_signals_;
    std::vector<std::string> base_confounders_;
};

}  // namespace

GeneratorOutput generate_stream(const GeneratorModel& model, uint64_t seed, const fs::path& out) {
    if (model.keywords.empty()) throw std::invalid_argument("model: keywords required");
    if (model.signals.empty()) throw std::invalid_argument("model: signals required");
    if (model.confounders.empty()) throw std::invalid_argument("model: confounders required");
    if (model.cities_csv.empty()) throw std::invalid_argument("model: cities_csv required");

    // a token in both a signal and a confounder pool would make relevance
    // ill-defined and the stopword path unsafe
    {
        std::set<std::string> signal_tokens;
        for (const auto& s : model.signals)
            for (const auto& t : s.tokens) signal_tokens.insert(t);
        for (const auto& c : model.confounders) {
            for (const auto& t : c.tokens) {
                if (signal_tokens.count(t)) {
                    throw std::invalid_argument("model: token '" + t +
                                                "' appears in both signal and confounder pools");
                }
            }
        }
        for (const auto& t : model.hot_confounder_terms) {
            if (signal_tokens.count(t)) {
                throw std::invalid_argument("model: hot term '" + t + "' is also a signal token");
            }
        }
    }

    auto cities = load_cities(model.cities_csv);
    Schedule schedule(model);
    Rng rng(seed ^ 0x5eedf00dULL);

    ensure_dir(out.parent_path().empty() ? fs::path(".") : out.parent_path());
    GeneratorOutput result;
    result.corpus = out;
    fs::path stem = out;
    stem.replace_extension();
    result.truth = stem.string() + ".truth.jsonl";
    result.corr = stem.string() + ".corr.jsonl";
    result.manifest = stem.string() + ".manifest.json";

    std::ostringstream corpus, truth, corr;

    const int64_t ms_per_post =
        std::max<int64_t>(1, static_cast<int64_t>(3600000.0 / model.posts_per_hour));
    const int64_t day_ms = 86400000;

    // physical-event state for relevant posts
    struct Eventlet {
        std::string key;
        const City* city;
        double lat, lon;
        int remaining = 0;
        bool planted = false;
    };
    Eventlet current{};
    std::set<std::pair<size_t, int64_t>> used_city_days;
    int64_t target_relevant =
        static_cast<int64_t>(static_cast<double>(model.post_count) * model.relevant_fraction);
    int64_t covered_budget =
        static_cast<int64_t>(static_cast<double>(target_relevant) * model.corroborative_coverage);

    auto pick_token = [&](const std::vector<std::string>& pool) -> const std::string& {
        return pool[static_cast<size_t>(rng.next_int(0, static_cast<int64_t>(pool.size()) - 1))];
    };

    std::vector<double> conf_weights;

    for (int64_t i = 0; i < model.post_count; ++i) {
        int64_t created = model.start_time_ms + i * ms_per_post;
        double mix = rng.next_double();
        ActiveVocab vocab = schedule.at(i, mix);
        bool relevant = rng.next_bool(model.relevant_fraction);

        std::string id = "s" + std::to_string(seed % 997) + "-" + std::to_string(i);
        std::string event_key;
        bool covered = false;
        std::optional<GeoPoint> geotag;

        const std::string& keyword = pick_token(model.keywords);
        std::vector<std::string> words;
        words.push_back(keyword);

        if (relevant && !vocab.signals.empty()) {
            if (current.remaining <= 0) {
                // new physical event at an unused (city, day) pair
                int64_t day = created / day_ms;
                size_t city_idx = 0;
                for (int attempt = 0; attempt < 64; ++attempt) {
                    city_idx = static_cast<size_t>(
                        rng.next_int(0, static_cast<int64_t>(cities.size()) - 1));
                    if (!used_city_days.count({city_idx, day})) break;
                }
                used_city_days.insert({city_idx, day});
                current.city = &cities[city_idx];
                current.key = current.city->name + "|" + std::to_string(day);
                current.lat = current.city->lat + (rng.next_double() - 0.5) * 0.04;
                current.lon = current.city->lon + (rng.next_double() - 0.5) * 0.04;

                std::vector<double> probs;
                for (const auto& [count, p] : model.posts_per_event) probs.push_back(p);
                current.remaining = model.posts_per_event[rng.next_weighted(probs)].first;

                current.planted =
                    result.covered < covered_budget && rng.next_bool(model.corroborative_coverage);
                if (current.planted) {
                    result.planted_events += 1;
                    json row{{"id", "trmm-" + std::to_string(result.planted_events)},
                             {"nowcast", "high"},
                             {"location", current.city->name},
                             {"lat", current.lat},
                             {"lon", current.lon},
                             {"date", format_iso8601((created / day_ms) * day_ms)}};
                    corr << row.dump() << '\n';
                }
            }
            current.remaining -= 1;
            event_key = current.key;
            covered = current.planted;
            if (covered) {
                result.covered += 1;
                geotag = GeoPoint{current.lat + (rng.next_double() - 0.5) * 0.01,
                                  current.lon + (rng.next_double() - 0.5) * 0.01};
            }

            // 2-4 signal tokens from the active vocabularies
            int n_tokens = static_cast<int>(rng.next_int(2, 4));
            for (int k = 0; k < n_tokens; ++k) {
                const SignalSpec* sig =
                    vocab.signals[static_cast<size_t>(rng.next_int(
                        0, static_cast<int64_t>(vocab.signals.size()) - 1))];
                if (!sig->tokens.empty()) words.push_back(pick_token(sig->tokens));
            }
            if (!model.common_tokens.empty() && rng.next_bool(0.7)) {
                words.push_back(pick_token(model.common_tokens));
            }
            words.push_back(current.city->name);
            result.relevant += 1;
        } else {
            relevant = false;  // no active signal pool degenerates to irrelevant
            if (!vocab.confounders.empty()) {
                conf_weights.clear();
                for (const auto* c : vocab.confounders) conf_weights.push_back(c->weight);
                const ConfounderSpec* pool = vocab.confounders[rng.next_weighted(conf_weights)];
                if (!model.hot_confounder_terms.empty() &&
                    rng.next_bool(model.hot_term_probability)) {
                    words.push_back(pick_token(model.hot_confounder_terms));
                }
                int n_tokens = static_cast<int>(rng.next_int(2, 4));
                for (int k = 0; k < n_tokens && !pool->tokens.empty(); ++k) {
                    words.push_back(pick_token(pool->tokens));
                }
            }
            for (const auto& t : vocab.flash_tokens) {
                if (rng.next_bool(0.5)) words.push_back(t);
            }
            if (!model.common_tokens.empty() && rng.next_bool(0.7)) {
                words.push_back(pick_token(model.common_tokens));
            }
            // some irrelevant chatter names places too (rallies, concerts),
            // keeping city tokens from becoming a relevance giveaway
            if (rng.next_bool(model.city_mention_irrelevant)) {
                const City& c = cities[static_cast<size_t>(
                    rng.next_int(0, static_cast<int64_t>(cities.size()) - 1))];
                words.push_back(c.name);
            }
            if (rng.next_bool(model.geotag_fraction_irrelevant)) {
                const City& c = cities[static_cast<size_t>(
                    rng.next_int(0, static_cast<int64_t>(cities.size()) - 1))];
                geotag = GeoPoint{c.lat + (rng.next_double() - 0.5) * 0.04,
                                  c.lon + (rng.next_double() - 0.5) * 0.04};
            }
        }

        std::string text;
        for (size_t w = 0; w < words.size(); ++w) {
            if (w) text += ' ';
            text += words[w];
        }

        json post{{"id", id}, {"text", text}, {"created_at", format_iso8601(created)}};
        if (geotag) {
            post["lat"] = geotag->lat;
            post["lon"] = geotag->lon;
        }
        corpus << post.dump() << '\n';

        json truth_row{{"id", id}, {"relevant", relevant}, {"covered", covered}};
        if (!event_key.empty()) truth_row["event_key"] = event_key;
        truth << truth_row.dump() << '\n';
        result.posts += 1;
    }

    atomic_write(result.corpus, corpus.str());
    atomic_write(result.truth, truth.str());
    atomic_write(result.corr, corr.str());
    json manifest{{"seed", seed},
                  {"event_type", model.event_type},
                  {"posts", result.posts},
                  {"relevant", result.relevant},
                  {"covered", result.covered},
                  {"planted_events", result.planted_events},
                  {"corpus", result.corpus.filename().string()},
                  {"truth", result.truth.filename().string()},
                  {"corr", result.corr.filename().string()}};
    atomic_write(result.manifest, manifest.dump(2));
    return result;
}

std::map<std::string, TruthRecord> load_truth(const fs::path& truth_file) {
    std::map<std::string, TruthRecord> out;
    std::ifstream in(truth_file);
    if (!in) throw std::runtime_error("truth file not readable: " + truth_file.string());
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        TruthRecord r;
        r.id = j.at("id").get<std::string>();
        r.relevant = j.at("relevant").get<bool>();
        r.event_key = j.value("event_key", "");
        r.covered = j.value("covered", false);
        out[r.id] = r;
    }
    return out;
}

namespace {

// long-tail pool: a handful of real words plus numbered variants, so no
// single tail token can outrank the planted hot terms
json tail_pool(const std::string& name, const std::vector<std::string>& base, double weight,
               size_t size) {
    std::vector<std::string> tokens = base;
    size_t v = 2;
    while (tokens.size() < size) {
        for (const auto& b : base) {
            if (tokens.size() >= size) break;
            tokens.push_back(b + std::to_string(v));
        }
        ++v;
    }
    return json{{"name", name}, {"tokens", tokens}, {"weight", weight}};
}

json signal_pool(const std::string& name, const std::vector<std::string>& tokens) {
    return json{{"name", name}, {"tokens", tokens}};
}

}  // namespace

json paper_fixture_model(const std::string& cities_csv, int64_t post_count) {
    json model;
    model["event_type"] = "landslide";
    model["keywords"] = {"landslide", "mudslide", "rockslide"};
    model["post_count"] = post_count;
    model["relevant_fraction"] = 0.35;
    model["start_time"] = "2019-06-01T00:00:00Z";
    model["posts_per_hour"] = 2000;
    model["cities_csv"] = cities_csv;
    model["corroborative_coverage"] = 0.04;
    model["geotag_fraction_irrelevant"] = 0.01;
    model["city_mention_irrelevant"] = 0.1;
    model["hot_confounder_terms"] = {"victory", "polling", "remix", "unfollow", "parody"};
    model["hot_term_probability"] = 0.15;
    model["common_tokens"] = {"in", "on", "at", "as", "is", "to", "up", "by"};
    model["signals"] = json::array({
        signal_pool("terrain", {"hillside", "collapsed", "debris", "buried", "slope", "boulders",
                                "embankment", "cliff"}),
        signal_pool("weather", {"rainfall", "saturated", "downpour", "soaked", "storm",
                                "torrential"}),
        signal_pool("impact", {"evacuated", "damaged", "blocked", "rescue", "highway", "homes",
                               "injured", "crews"}),
    });
    model["active_signals"] = {"terrain", "weather", "impact"};
    model["confounders"] = json::array({
        tail_pool("election",
                  {"election", "recount", "senate", "ballot", "campaign", "rally", "debate",
                   "governor", "margin", "votes"},
                  1.0, 100),
        tail_pool("song",
                  {"fleetwood", "song", "lyrics", "album", "cover", "chords", "playlist",
                   "acoustic", "vinyl", "stevie"},
                  0.7, 100),
        tail_pool("meme",
                  {"lmao", "viral", "trending", "joke", "thread", "ratio", "crying", "literally",
                   "mood", "iconic"},
                  0.5, 100),
    });
    model["active_confounders"] = {"election", "song", "meme"};
    model["drift_schedule"] = json::array();
    return model;
}

json drift_experiment_model(const std::string& cities_csv, int64_t post_count, int64_t drift_at) {
    json model = paper_fixture_model(cities_csv, post_count);
    model["relevant_fraction"] = 0.5;
    model["corroborative_coverage"] = 0.05;
    model["hot_term_probability"] = 0.18;
    // fresh vocabularies for the post-drift regime
    auto signals = model["signals"];
    signals.push_back(signal_pool("terrain_b", {"mudflow", "slippage", "scarp", "rubble",
                                                "landmass", "subsidence", "washout", "gully"}));
    signals.push_back(signal_pool("weather_b", {"monsoon", "deluge", "cloudburst", "runoff",
                                                "drenched", "floodwater"}));
    signals.push_back(signal_pool("impact_b", {"stranded", "casualties", "displaced", "buried",
                                               "responders", "closures", "villages", "motorway"}));
    model["signals"] = signals;
    auto confounders = model["confounders"];
    // the post-drift irrelevant stream leans on the static-stopword theme
    // ("election") so the negative-sample path keeps flowing through the swap
    confounders.push_back(tail_pool("election_b",
                                    {"election", "midterm", "runoff", "precinct", "turnout",
                                     "incumbent", "primaries", "caucus", "localpoll", "tally"},
                                    1.0, 60));
    confounders.push_back(tail_pool("meme_b",
                                    {"skibidi", "cursed", "based", "unhinged", "sobbing",
                                     "screaming", "deceased", "npc", "gyatt", "fr"},
                                    0.6, 80));
    model["confounders"] = confounders;
    model["drift_schedule"] = json::array({json{{"kind", "sudden"},
                                                {"at_post", drift_at},
                                                {"signals", {"terrain_b", "weather_b", "impact_b"}},
                                                {"confounders", {"election_b", "meme_b"}}}});
    return model;
}

}  // namespace em

// Command-line front end. Links the shared library through its C API only.

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "eventmapper.h"

namespace {

// exit codes: 0 ok, 1 usage, 2 runtime failure, 3 failed-process alert present
constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kRuntime = 2;
constexpr int kAlert = 3;

em_pipeline* g_running = nullptr;

void handle_signal(int) {
    if (g_running) em_pipeline_stop(g_running);
}

int fail_runtime(const char* what) {
    std::fprintf(stderr, "error: %s: %s\n", what, em_last_error());
    return kRuntime;
}

int run_pipeline(const std::string& config_path) {
    em_pipeline* p = em_pipeline_open(config_path.c_str());
    if (!p) {
        std::fprintf(stderr, "error: %s\n", em_last_error());
        return kRuntime;
    }
    g_running = p;
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    int failed = em_pipeline_run(p);
    g_running = nullptr;
    em_pipeline_close(p);
    if (failed < 0) return fail_runtime("pipeline");
    if (failed > 0) {
        std::fprintf(stderr, "%d process(es) ended in the failed state\n", failed);
        return kAlert;
    }
    return kOk;
}

double parse_speed(std::string s) {
    if (!s.empty() && (s[0] == 'x' || s[0] == 'X')) s.erase(0, 1);
    try {
        return std::stod(s);
    } catch (const std::exception&) {
        return -1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"eventmapper — weak-signal event recognition pipeline"};
    app.require_subcommand(1);

    // run
    auto* run = app.add_subcommand("run", "run a pipeline from a config file");
    std::string run_config;
    run->add_option("--config", run_config, "pipeline config (JSON)")->required();

    // replay
    auto* replay = app.add_subcommand("replay", "replay a corpus through a pipeline");
    std::string replay_corpus, replay_speed = "x0", replay_config;
    replay->add_option("--corpus", replay_corpus, "corpus file (JSON lines)")->required();
    replay->add_option("--speed", replay_speed, "pacing factor, e.g. x10 (x0 = unpaced)");
    replay->add_option("--config", replay_config,
                       "pipeline config to replay through (its streamer corpus and "
                       "speed are overridden)");

    // generate
    auto* generate = app.add_subcommand("generate", "generate a synthetic drifting stream");
    std::string gen_model, gen_out;
    uint64_t gen_seed = 0;
    generate->add_option("--model", gen_model, "generator model (JSON)")->required();
    generate->add_option("--seed", gen_seed, "RNG seed")->required();
    generate->add_option("--out", gen_out, "output corpus path")->required();

    // stats
    auto* stats = app.add_subcommand("stats", "report statistics for a run directory");
    std::string stats_dir;
    bool stats_json = false;
    stats->add_option("--dir", stats_dir, "run data directory")->required();
    stats->add_flag("--json", stats_json, "print raw JSON");

    // export
    auto* exp = app.add_subcommand("export", "export detected events as GeoJSON");
    std::string exp_dir, exp_out = "events.geojson";
    exp->add_option("--dir", exp_dir, "run data directory")->required();
    exp->add_option("--out", exp_out, "output file");

    // health
    auto* health = app.add_subcommand("health", "process health and alert status");
    std::string health_dir;
    health->add_option("--dir", health_dir, "run data directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    if (run->parsed()) {
        return run_pipeline(run_config);
    }

    if (replay->parsed()) {
        double speed = parse_speed(replay_speed);
        if (speed < 0) {
            std::fprintf(stderr, "error: bad --speed value '%s'\n", replay_speed.c_str());
            return kUsage;
        }
        // rewrite the config with the requested corpus and pacing
        nlohmann::json doc;
        if (!replay_config.empty()) {
            std::FILE* f = std::fopen(replay_config.c_str(), "rb");
            if (!f) {
                std::fprintf(stderr, "error: cannot read config %s\n", replay_config.c_str());
                return kRuntime;
            }
            std::string content;
            char buf[4096];
            size_t n;
            while ((n = std::fread(buf, 1, sizeof(buf), f)) > 0) content.append(buf, n);
            std::fclose(f);
            try {
                doc = nlohmann::json::parse(content);
            } catch (const std::exception& e) {
                std::fprintf(stderr, "error: config is not valid JSON: %s\n", e.what());
                return kRuntime;
            }
        } else {
            std::fprintf(stderr,
                         "error: replay needs --config (a pipeline to replay the corpus "
                         "through)\n");
            return kUsage;
        }
        bool patched = false;
        for (auto& proc : doc["processes"]) {
            if (proc.value("type", "") == "replay_stream") {
                proc["params"]["corpus"] = replay_corpus;
                proc["params"]["speed"] = speed;
                patched = true;
            }
        }
        if (!patched) {
            std::fprintf(stderr, "error: config has no replay_stream process to patch\n");
            return kUsage;
        }
        if (speed > 0) doc["clock"] = "real";
        std::string tmp = (doc.value("data_dir", ".") + "/replay_config.json");
        {
            std::FILE* f = std::fopen(tmp.c_str(), "wb");
            if (!f) {
                // data_dir may not exist yet; fall back to cwd
                tmp = "replay_config.json";
                f = std::fopen(tmp.c_str(), "wb");
                if (!f) {
                    std::fprintf(stderr, "error: cannot write %s\n", tmp.c_str());
                    return kRuntime;
                }
            }
            std::string dumped = doc.dump(2);
            std::fwrite(dumped.data(), 1, dumped.size(), f);
            std::fclose(f);
        }
        return run_pipeline(tmp);
    }

    if (generate->parsed()) {
        int rc = em_generate(gen_model.c_str(), gen_seed, gen_out.c_str());
        if (rc != EM_OK) return fail_runtime("generate");
        std::printf("wrote %s (+ .truth.jsonl, .corr.jsonl, .manifest.json)\n", gen_out.c_str());
        return kOk;
    }

    if (stats->parsed()) {
        char* report = em_stats_json(stats_dir.c_str());
        if (!report) return fail_runtime("stats");
        if (stats_json) {
            std::printf("%s\n", report);
        } else {
            // human-readable summary from the JSON payload
            try {
                auto j = nlohmann::json::parse(report);
                std::printf("posts ingested:       %lld\n",
                            (long long)j.value("posts_total", 0LL));
                std::printf("stopword filtered:    %lld (%lld dynamic)\n",
                            (long long)j.value("filtered_total", 0LL),
                            (long long)j.value("filtered_dynamic", 0LL));
                std::printf("predicted irrelevant: %lld\n",
                            (long long)j.value("predicted_irrelevant", 0LL));
                std::printf("irrelevant fraction:  %.4f\n", j.value("irrelevant_fraction", 0.0));
                std::printf("stopword share:       %.4f of irrelevant\n",
                            j.value("stopword_filtered_fraction", 0.0));
                std::printf("weak labeled:         %lld (%.4f of posts)\n",
                            (long long)j.value("weak_labeled", 0LL),
                            j.value("weak_labeled_fraction", 0.0));
                std::printf("detections:           %lld\n",
                            (long long)j.value("detections_total", 0LL));
                std::printf("events:               %lld\n",
                            (long long)j.value("events_total", 0LL));
                std::printf("posts per event:      ");
                bool first = true;
                if (j.contains("posts_per_event")) {
                    for (auto& [k, v] : j.at("posts_per_event").items()) {
                        std::printf("%s%s:%lld", first ? "" : " ", k.c_str(),
                                    (long long)v.get<int64_t>());
                        first = false;
                    }
                }
                std::printf("\nclassifiers:          %zu\n",
                            j.value("classifiers", nlohmann::json::array()).size());
                std::printf("drift events:         %zu\n",
                            j.value("drift_timeline", nlohmann::json::array()).size());
            } catch (const std::exception&) {
                std::printf("%s\n", report);
            }
        }
        em_string_free(report);
        return kOk;
    }

    if (exp->parsed()) {
        int rc = em_export_geojson(exp_dir.c_str(), exp_out.c_str());
        if (rc != EM_OK) return fail_runtime("export");
        std::printf("wrote %s\n", exp_out.c_str());
        return kOk;
    }

    if (health->parsed()) {
        char* summary = nullptr;
        int alerts = em_health(health_dir.c_str(), &summary);
        if (alerts < 0) {
            if (summary) em_string_free(summary);
            return fail_runtime("health");
        }
        if (summary) {
            std::printf("%s\n", summary);
            em_string_free(summary);
        }
        if (alerts > 0) {
            std::fprintf(stderr, "%d alert(s) present\n", alerts);
            return kAlert;
        }
        return kOk;
    }

    return kUsage;
}

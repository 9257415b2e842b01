#include "eventmapper.h"

#include <cstring>
#include <memory>
#include <string>

#include <json.hpp>

#include "em/bus.hpp"
#include "em/config.hpp"
#include "em/events.hpp"
#include "em/fsutil.hpp"
#include "em/pipeline.hpp"
#include "em/process.hpp"
#include "em/stats.hpp"
#include "em/synth.hpp"

using nlohmann::json;

namespace {

thread_local std::string t_last_error;

void set_error(const std::string& msg) { t_last_error = msg; }

// maps C++ failures onto C status codes at the boundary
template <typename F>
int guarded(F&& f) {
    try {
        t_last_error.clear();
        return f();
    } catch (const std::invalid_argument& e) {
        set_error(e.what());
        return EM_E_INVALID;
    } catch (const std::out_of_range& e) {
        set_error(e.what());
        return EM_E_INVALID;
    } catch (const std::logic_error& e) {
        set_error(e.what());
        return EM_E_STATE;
    } catch (const std::runtime_error& e) {
        set_error(e.what());
        return EM_E_IO;
    } catch (const std::exception& e) {
        set_error(e.what());
        return EM_E_RUNTIME;
    } catch (...) {
        set_error("unknown failure");
        return EM_E_RUNTIME;
    }
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(::malloc(s.size() + 1));
    if (!out) return nullptr;
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

}  // namespace

struct em_bus {
    em::MessageBus bus;
    explicit em_bus(const char* dir) : bus(dir) {}
};

struct em_sub {
    std::shared_ptr<em::Subscription> sub;
};

struct em_msg {
    em::Message msg;
};

struct em_pipeline {
    em::PipelineConfig config;
    std::unique_ptr<em::Supervisor> supervisor;
};

extern "C" {

const char* em_version(void) { return "1.0.0"; }

const char* em_last_error(void) { return t_last_error.c_str(); }

void em_string_free(char* s) { ::free(s); }

/* ------------------------------------------------------------------ */

em_bus* em_bus_open(const char* data_dir) {
    if (!data_dir) {
        set_error("data_dir is required");
        return nullptr;
    }
    em_bus* out = nullptr;
    guarded([&] {
        out = new em_bus(data_dir);
        return EM_OK;
    });
    return out;
}

void em_bus_close(em_bus* bus) { delete bus; }

int64_t em_bus_publish(em_bus* bus, const char* topic, const void* payload, size_t len,
                       const char* id) {
    if (!bus || !topic || (!payload && len > 0)) {
        set_error("bus, topic, and payload are required");
        return EM_E_INVALID;
    }
    int64_t offset = -1;
    int rc = guarded([&] {
        auto m = bus->bus.publish(topic,
                                  std::string(static_cast<const char*>(payload), len),
                                  id ? id : "");
        offset = m.offset;
        return EM_OK;
    });
    return rc == EM_OK ? offset : rc;
}

int64_t em_bus_topic_end(em_bus* bus, const char* topic) {
    if (!bus || !topic) {
        set_error("bus and topic are required");
        return EM_E_INVALID;
    }
    int64_t end = 0;
    int rc = guarded([&] {
        end = bus->bus.topic_end(topic);
        return EM_OK;
    });
    return rc == EM_OK ? end : rc;
}

em_sub* em_bus_subscribe(em_bus* bus, const char* consumer_key, const char* topic) {
    if (!bus || !consumer_key || !topic) {
        set_error("bus, consumer_key, and topic are required");
        return nullptr;
    }
    em_sub* out = nullptr;
    guarded([&] {
        auto sub = bus->bus.subscribe(consumer_key, topic);
        out = new em_sub{std::move(sub)};
        return EM_OK;
    });
    return out;
}

void em_sub_close(em_sub* sub) { delete sub; }

em_msg* em_sub_poll(em_sub* sub) {
    if (!sub) {
        set_error("subscription is required");
        return nullptr;
    }
    em_msg* out = nullptr;
    guarded([&] {
        auto msgs = sub->sub->poll(1);
        if (!msgs.empty()) out = new em_msg{std::move(msgs.front())};
        return EM_OK;
    });
    return out;
}

int em_sub_ack(em_sub* sub, int64_t offset) {
    if (!sub) {
        set_error("subscription is required");
        return EM_E_INVALID;
    }
    return guarded([&] {
        sub->sub->acknowledge(offset);
        return EM_OK;
    });
}

const char* em_msg_id(const em_msg* msg) { return msg ? msg->msg.id.c_str() : nullptr; }
const char* em_msg_topic(const em_msg* msg) { return msg ? msg->msg.topic.c_str() : nullptr; }
int32_t em_msg_partition(const em_msg* msg) { return msg ? msg->msg.partition : -1; }
int64_t em_msg_offset(const em_msg* msg) { return msg ? msg->msg.offset : -1; }
int64_t em_msg_published_at_ms(const em_msg* msg) { return msg ? msg->msg.published_at_ms : 0; }

const void* em_msg_payload(const em_msg* msg, size_t* len) {
    if (!msg) {
        if (len) *len = 0;
        return nullptr;
    }
    if (len) *len = msg->msg.payload.size();
    return msg->msg.payload.data();
}

void em_msg_free(em_msg* msg) { delete msg; }

/* ------------------------------------------------------------------ */

em_pipeline* em_pipeline_open(const char* config_path) {
    if (!config_path) {
        set_error("config path is required");
        return nullptr;
    }
    em_pipeline* out = nullptr;
    guarded([&] {
        auto config = em::load_pipeline_config(config_path, em::handler_types());
        auto p = std::make_unique<em_pipeline>();
        p->config = std::move(config);
        p->supervisor = em::make_pipeline(p->config);
        out = p.release();
        return EM_OK;
    });
    return out;
}

int em_pipeline_run(em_pipeline* p) {
    if (!p || !p->supervisor) {
        set_error("pipeline handle is invalid");
        return EM_E_INVALID;
    }
    int failed = 0;
    int rc = guarded([&] {
        failed = p->supervisor->run();
        return EM_OK;
    });
    return rc == EM_OK ? failed : rc;
}

int em_pipeline_stop(em_pipeline* p) {
    if (!p || !p->supervisor) {
        set_error("pipeline handle is invalid");
        return EM_E_INVALID;
    }
    return guarded([&] {
        p->supervisor->request_stop();
        return EM_OK;
    });
}

void em_pipeline_close(em_pipeline* p) { delete p; }

/* ------------------------------------------------------------------ */

int em_generate(const char* model_path, uint64_t seed, const char* out_path) {
    if (!model_path || !out_path) {
        set_error("model and output paths are required");
        return EM_E_INVALID;
    }
    return guarded([&] {
        auto model = em::GeneratorModel::load(model_path);
        em::generate_stream(model, seed, out_path);
        return EM_OK;
    });
}

char* em_stats_json(const char* run_dir) {
    if (!run_dir) {
        set_error("run_dir is required");
        return nullptr;
    }
    char* out = nullptr;
    guarded([&] {
        auto report = em::compute_stats(run_dir);
        out = dup_string(report.to_json().dump(2));
        return EM_OK;
    });
    return out;
}

int em_export_geojson(const char* run_dir, const char* out_path) {
    if (!run_dir || !out_path) {
        set_error("run_dir and out_path are required");
        return EM_E_INVALID;
    }
    return guarded([&] {
        em::fs::path dir(run_dir);
        if (!em::fs::exists(dir)) {
            throw std::invalid_argument("run directory does not exist: " + std::string(run_dir));
        }
        em::GridParams grid;
        auto pipeline = em::read_file(dir / "pipeline.json");
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
        auto events = em::EventStore::aggregate_journal(dir / "events" / "journal.jsonl", grid);
        em::export_geojson(events, out_path);
        return EM_OK;
    });
}

int em_health(const char* run_dir, char** summary_json_out) {
    if (!run_dir) {
        set_error("run_dir is required");
        return EM_E_INVALID;
    }
    int alerts = 0;
    int rc = guarded([&] {
        em::fs::path dir(run_dir);
        if (!em::fs::exists(dir)) {
            throw std::invalid_argument("run directory does not exist: " + std::string(run_dir));
        }
        json summary{{"alerts", json::array()}, {"processes", json::array()}};
        if (auto alerts_content = em::read_file(dir / "alerts.jsonl")) {
            size_t start = 0;
            while (start < alerts_content->size()) {
                size_t end = alerts_content->find('\n', start);
                if (end == std::string::npos) end = alerts_content->size();
                if (end > start) {
                    try {
                        summary["alerts"].push_back(
                            json::parse(alerts_content->substr(start, end - start)));
                        ++alerts;
                    } catch (const std::exception&) {
                    }
                }
                start = end + 1;
            }
        }
        if (auto status = em::read_file(dir / "status.json")) {
            try {
                summary["processes"] = json::parse(*status).value("processes", json::array());
            } catch (const std::exception&) {
            }
        }
        if (summary_json_out) *summary_json_out = dup_string(summary.dump(2));
        return EM_OK;
    });
    return rc == EM_OK ? alerts : rc;
}

} /* extern "C" */

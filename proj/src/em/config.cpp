#include "em/config.hpp"

#include <set>

#include "em/fsutil.hpp"

using nlohmann::json;

namespace em {

namespace {

std::string get_topic_field(const json& p, const char* key) {
    if (!p.contains(key) || p.at(key).is_null()) return "";
    return p.at(key).get<std::string>();
}

}  // namespace

PipelineConfig parse_pipeline_config(const json& doc,
                                     const std::map<std::string, HandlerTypeInfo>& types) {
    PipelineConfig cfg;
    cfg.raw = doc;
    if (!doc.contains("data_dir")) throw std::invalid_argument("config: data_dir is required");
    cfg.data_dir = doc.at("data_dir").get<std::string>();

    std::string clock = doc.value("clock", "simulated");
    if (clock != "real" && clock != "simulated") {
        throw std::invalid_argument("config: clock must be \"real\" or \"simulated\"");
    }
    cfg.simulated_clock = clock == "simulated";

    std::string mode = doc.value("mode", "threads");
    if (mode != "threads" && mode != "subprocess") {
        throw std::invalid_argument("config: mode must be \"threads\" or \"subprocess\"");
    }
    cfg.subprocess_mode = mode == "subprocess";

    cfg.supervisor.subprocess_mode = cfg.subprocess_mode;
    cfg.supervisor.simulated_clock = cfg.simulated_clock;
    if (doc.contains("supervisor")) {
        const json& s = doc.at("supervisor");
        cfg.supervisor.check_interval_s = s.value("check_interval_s", 0.25);
        cfg.supervisor.healthy_reset_s = s.value("healthy_reset_s", 300.0);
        cfg.supervisor.stop_when_idle = s.value("stop_when_idle", true);
        cfg.supervisor.idle_confirmations = s.value("idle_confirmations", 3);
        cfg.supervisor.max_runtime_s = s.value("max_runtime_s", 0.0);
    }
    cfg.supervisor.sim_start_ms = doc.value("sim_start_ms", int64_t{0});

    for (const auto& t : doc.value("external_topics", std::vector<std::string>{})) {
        cfg.external_topics.push_back(t);
    }

    if (!doc.contains("processes") || !doc.at("processes").is_array()) {
        throw std::invalid_argument("config: processes array is required");
    }

    std::set<std::string> names;
    std::set<std::string> produced(cfg.external_topics.begin(), cfg.external_topics.end());
    std::vector<std::pair<std::string, std::string>> consumed;  // (process, topic)

    for (const json& p : doc.at("processes")) {
        ProcessSpec spec;
        spec.name = p.value("name", "");
        spec.type = p.value("type", "");
        spec.import_key = get_topic_field(p, "import");
        spec.export_key = get_topic_field(p, "export");
        spec.periodic_interval_s = p.value("periodic_interval_s", 0.0);
        spec.max_successive_failures = p.value("max_successive_failures", 3);
        spec.heartbeat_timeout_s = p.value("heartbeat_timeout_s", 60.0);
        spec.params = p.value("params", json::object());

        if (spec.name.empty() || !MessageBus::valid_topic(spec.name)) {
            throw std::invalid_argument("config: process name '" + spec.name +
                                        "' must be non-empty, lowercase [a-z0-9_.-]");
        }
        if (!names.insert(spec.name).second) {
            throw std::invalid_argument("config: duplicate process name '" + spec.name + "'");
        }
        auto it = types.find(spec.type);
        if (it == types.end()) {
            throw std::invalid_argument("config: unknown process type '" + spec.type +
                                        "' for process '" + spec.name + "'");
        }
        const HandlerTypeInfo& info = it->second;
        if (info.needs_import && spec.import_key.empty()) {
            throw std::invalid_argument("config: process '" + spec.name + "' of type '" +
                                        spec.type + "' requires an import key");
        }
        if (!info.needs_import && !spec.import_key.empty()) {
            throw std::invalid_argument("config: source process '" + spec.name +
                                        "' must not have an import key");
        }
        if (!spec.import_key.empty() && spec.import_key == spec.export_key) {
            throw std::invalid_argument("config: process '" + spec.name +
                                        "' forms a self-loop (import == export)");
        }
        for (const std::string* t : {&spec.import_key, &spec.export_key}) {
            if (!t->empty() && !MessageBus::valid_topic(*t)) {
                throw std::invalid_argument("config: invalid topic '" + *t + "' on process '" +
                                            spec.name + "'");
            }
        }

        if (!spec.export_key.empty()) produced.insert(spec.export_key);
        if (!spec.import_key.empty()) consumed.emplace_back(spec.name, spec.import_key);
        if (info.aux_produces) {
            for (const auto& t : info.aux_produces(spec)) produced.insert(t);
        }
        if (info.aux_consumes) {
            for (const auto& t : info.aux_consumes(spec)) consumed.emplace_back(spec.name, t);
        }
        cfg.processes.push_back(std::move(spec));
    }

    for (const auto& [proc, topic] : consumed) {
        if (!produced.count(topic)) {
            throw std::invalid_argument("config: process '" + proc + "' consumes topic '" + topic +
                                        "' that no process produces (declare it in "
                                        "external_topics if it is pre-existing)");
        }
    }
    return cfg;
}

PipelineConfig load_pipeline_config(const fs::path& file,
                                    const std::map<std::string, HandlerTypeInfo>& types) {
    auto content = read_file(file);
    if (!content) throw std::invalid_argument("config file not readable: " + file.string());
    json doc;
    try {
        doc = json::parse(*content);
    } catch (const std::exception& e) {
        throw std::invalid_argument("config file " + file.string() + " is not valid JSON: " +
                                    e.what());
    }
    return parse_pipeline_config(doc, types);
}

}  // namespace em

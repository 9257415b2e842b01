#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "em/process.hpp"

namespace em {

struct PipelineConfig {
    fs::path data_dir;
    bool simulated_clock = true;
    bool subprocess_mode = false;
    nlohmann::json raw;  // full document; handlers read their sections from here
    std::vector<ProcessSpec> processes;
    SupervisorOptions supervisor;
    std::vector<std::string> external_topics;
};

// Parses and validates a pipeline document against the known handler types.
// Rejects unknown process types, duplicate names, self-loops, and dangling
// topic references. Throws std::invalid_argument with a specific message.
PipelineConfig parse_pipeline_config(const nlohmann::json& doc,
                                     const std::map<std::string, HandlerTypeInfo>& types);

PipelineConfig load_pipeline_config(const fs::path& file,
                                    const std::map<std::string, HandlerTypeInfo>& types);

}  // namespace em

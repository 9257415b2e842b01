#pragma once

#include <map>
#include <memory>
#include <string>

#include "em/config.hpp"
#include "em/process.hpp"
#include "em/stats.hpp"

namespace em {

// Handler types available to pipeline configs, with the metadata config
// validation needs (import requirements, auxiliary topic declarations).
const std::map<std::string, HandlerTypeInfo>& handler_types();

// Factory resolving process specs to handler instances, bound to the
// parsed config's global sections (keywords, embedding, grid, pool, ...).
HandlerFactory make_handler_factory(const PipelineConfig& cfg);

// Builds the supervisor for a config and records the run's topic map and
// grid parameters under <data_dir>/pipeline.json for stats and export.
std::unique_ptr<Supervisor> make_pipeline(const PipelineConfig& cfg);

// The effective topic names of a config, derived from its process specs.
TopicMap derive_topic_map(const PipelineConfig& cfg);

// A ready-to-run single-event-type pipeline document (landslide defaults):
// replay streamer, cleaning, extraction, integration, detection, stats.
nlohmann::json default_pipeline_config(const std::string& data_dir, const std::string& corpus,
                                       const std::string& corr_fixture,
                                       const std::string& seed_gazetteer);

}  // namespace em

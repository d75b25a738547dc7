#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "agentsoc/ingest.hpp"
#include "agentsoc/monitor.hpp"
#include "agentsoc/nce.hpp"
#include "agentsoc/perception.hpp"
#include "agentsoc/rsem.hpp"

namespace agentsoc::config {

struct IngestConfig {
    ingest::DetectionConfig detection;
    double baseline_fraction = 0.5;  // leading share of the sorted stream used for the baseline
    bool strict = false;
};

struct PerceptionConfig {
    perception::NoiseConfig noise;
    perception::EnrichConfig enrich;
    std::string incident_source = "POC";
};

struct NceConfig {
    nce::GeneratorConfig generator;
    nce::AdapterConfig llm;
    std::string technique_mapping;  // path; empty = next to the snapshot, else bundled
};

struct RsemConfig {
    rsem::RiskWeights weights;
    std::string calibration;  // path; empty = next to the snapshot, else bundled
};

struct PlaybookConfig {
    double impact_threshold = 0.5;
    bool complement_dependencies = true;
};

struct PipelineConfig {
    int workers = 0;  // 0 = hardware concurrency
    int enrichment_retries = 3;
    int retry_backoff_ms = 10;
    bool live = false;
};

struct ApiConfig {
    std::string bind = "127.0.0.1";
    int port = 8080;
    std::string token;
    std::string journal;
};

struct Config {
    IngestConfig ingest;
    PerceptionConfig perception;
    NceConfig nce;
    RsemConfig rsem;
    PlaybookConfig playbook;
    monitor::MonitorConfig monitor;
    PipelineConfig pipeline;
    ApiConfig api;

    // Validates every section; ConfigError names the offending key.
    void validate() const;
    int effective_workers() const;
};

// "section.key" -> raw value text.
using Overrides = std::map<std::string, std::string>;

// Parses `[section]` headers and `key = value` lines; '#' starts a comment, strings may be quoted.
// Unknown sections or keys are errors.
Overrides parse_config_text(std::string_view text);
Overrides read_config_file(const std::filesystem::path& path);

// AGENTSOC_<SECTION>_<KEY> variables for every known key.
Overrides env_overrides();

void apply(Config& config, const Overrides& overrides);

// defaults < file < environment < flags, then validate().
Config load(const std::filesystem::path& file, const Overrides& flags);

std::vector<std::string> known_keys();

json to_json(const Config& c);
// Inverse of to_json (the api token is never serialized).
Config config_from_json(const json& j);

}  // namespace agentsoc::config
